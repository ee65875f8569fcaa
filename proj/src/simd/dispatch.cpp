#include <atomic>
#include <cstdlib>
#include <string_view>

#include "skelsr/simd.hpp"

namespace skelsr::simd {

#if defined(SKELSR_HAVE_AVX2)
const KernelTable* avx2_table();
#endif

namespace {

bool cpu_has_avx2() {
#if defined(SKELSR_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable* initial_table() {
    const KernelTable* avx = avx2_kernels();
    if (const char* env = std::getenv("SKELSR_ISA")) {
        if (std::string_view(env) == "scalar") return &scalar_kernels();
    }
    return avx ? avx : &scalar_kernels();
}

std::atomic<const KernelTable*>& selected() {
    static std::atomic<const KernelTable*> table{initial_table()};
    return table;
}

}  // namespace

const KernelTable* avx2_kernels() {
#if defined(SKELSR_HAVE_AVX2)
    static const bool ok = cpu_has_avx2();
    return ok ? avx2_table() : nullptr;
#else
    return nullptr;
#endif
}

const KernelTable& kernels() { return *selected().load(std::memory_order_relaxed); }

Isa active_isa() { return kernels().isa; }

bool force_isa(Isa isa) {
    const KernelTable* t = isa == Isa::Scalar ? &scalar_kernels() : avx2_kernels();
    if (!t) return false;
    selected().store(t, std::memory_order_relaxed);
    return true;
}

}  // namespace skelsr::simd
