#include <atomic>
#include <cstdlib>
#include <cstring>

#include "fatbench/kernels.hpp"

namespace fatbench::kern {
namespace {

std::atomic<const KernelTable*> g_active{nullptr};

const KernelTable* pick_default() {
    if (const char* env = std::getenv("FATBENCH_KERNEL")) {
        if (std::strcmp(env, "scalar") == 0) return &scalar_table();
        if (std::strcmp(env, "avx2") == 0 && avx2_available()) return &avx2_table();
    }
    return avx2_available() ? &avx2_table() : &scalar_table();
}

}  // namespace

bool avx2_available() {
#if defined(FATBENCH_HAVE_AVX2)
    static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return ok;
#else
    return false;
#endif
}

const KernelTable& active() {
    const KernelTable* t = g_active.load(std::memory_order_acquire);
    if (!t) {
        t = pick_default();
        g_active.store(t, std::memory_order_release);
    }
    return *t;
}

bool set_backend(Backend b) {
    switch (b) {
        case Backend::Scalar:
            g_active.store(&scalar_table(), std::memory_order_release);
            return true;
        case Backend::Avx2:
            if (!avx2_available()) return false;
            g_active.store(&avx2_table(), std::memory_order_release);
            return true;
    }
    return false;
}

std::string active_name() { return active().name; }

}  // namespace fatbench::kern
