#include "falb/blas.hpp"

#include <dlfcn.h>

#include <cstdlib>
#include <mutex>
#include <string>

namespace falb::blas {
namespace {

// cblas enums (stable C ABI).
constexpr int kRowMajor = 101;
constexpr int kNoTrans = 111;
constexpr int kTrans = 112;

using sgemm_fn = void (*)(int, int, int, int, int, int, float, const float*, int, const float*,
                          int, float, float*, int);
using dgemm_fn = void (*)(int, int, int, int, int, int, double, const double*, int, const double*,
                          int, double, double*, int);

struct Backend {
  sgemm_fn sgemm = nullptr;
  dgemm_fn dgemm = nullptr;
  std::string name = "internal";
};

// The sandbox VM masks CPUID model info, so OpenBLAS's runtime dispatch picks
// a generic kernel unless OPENBLAS_CORETYPE is set before the library loads.
// Detection happens in the library constructor, hence dlopen after setenv.
const char* pick_coretype() {
#if defined(__x86_64__)
  if (__builtin_cpu_supports("avx512f") && __builtin_cpu_supports("avx512dq") &&
      __builtin_cpu_supports("avx512bw") && __builtin_cpu_supports("avx512vl")) {
#if defined(__GNUC__) && __GNUC__ >= 11
    if (__builtin_cpu_supports("avx512bf16")) return "COOPERLAKE";
#endif
    return "SKYLAKEX";
  }
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return "HASWELL";
#endif
  return nullptr;
}

Backend load_backend() {
  Backend be;
  if (::getenv("OPENBLAS_CORETYPE") == nullptr) {
    if (const char* core = pick_coretype()) ::setenv("OPENBLAS_CORETYPE", core, 0);
  }
  // Single-threaded BLAS keeps results bitwise reproducible.
  ::setenv("OPENBLAS_NUM_THREADS", "1", 1);
  for (const char* lib : {"libopenblas.so.0", "libopenblas.so"}) {
    if (void* h = ::dlopen(lib, RTLD_NOW | RTLD_LOCAL)) {
      auto s = reinterpret_cast<sgemm_fn>(::dlsym(h, "cblas_sgemm"));
      auto d = reinterpret_cast<dgemm_fn>(::dlsym(h, "cblas_dgemm"));
      if (s && d) {
        be.sgemm = s;
        be.dgemm = d;
        const char* core = ::getenv("OPENBLAS_CORETYPE");
        be.name = std::string("openblas/") + (core ? core : "auto");
        return be;
      }
      ::dlclose(h);
    }
  }
  return be;
}

const Backend& backend_instance() {
  static Backend be = load_backend();
  return be;
}

}  // namespace

template <typename T>
void naive_gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, T alpha, const T* a,
                int64_t lda, const T* b, int64_t ldb, T beta, T* c, int64_t ldc) {
  auto at = [&](int64_t i, int64_t p) { return trans_a ? a[p * lda + i] : a[i * lda + p]; };
  auto bt = [&](int64_t p, int64_t j) { return trans_b ? b[j * ldb + p] : b[p * ldb + j]; };
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      T acc = 0;
      for (int64_t p = 0; p < k; ++p) acc += at(i, p) * bt(p, j);
      c[i * ldc + j] = alpha * acc + (beta == T(0) ? T(0) : beta * c[i * ldc + j]);
    }
  }
}

template void naive_gemm<float>(bool, bool, int64_t, int64_t, int64_t, float, const float*,
                                int64_t, const float*, int64_t, float, float*, int64_t);
template void naive_gemm<double>(bool, bool, int64_t, int64_t, int64_t, double, const double*,
                                 int64_t, const double*, int64_t, double, double*, int64_t);

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, float alpha, const float* a,
          int64_t lda, const float* b, int64_t ldb, float beta, float* c, int64_t ldc) {
  const Backend& be = backend_instance();
  if (be.sgemm) {
    be.sgemm(kRowMajor, trans_a ? kTrans : kNoTrans, trans_b ? kTrans : kNoTrans,
             static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
             static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
    return;
  }
  naive_gemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha,
          const double* a, int64_t lda, const double* b, int64_t ldb, double beta, double* c,
          int64_t ldc) {
  const Backend& be = backend_instance();
  if (be.dgemm) {
    be.dgemm(kRowMajor, trans_a ? kTrans : kNoTrans, trans_b ? kTrans : kNoTrans,
             static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
             static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
    return;
  }
  naive_gemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

const char* backend() { return backend_instance().name.c_str(); }

}  // namespace falb::blas
