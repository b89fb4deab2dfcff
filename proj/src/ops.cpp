#include "nestseg/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <functional>
#include <thread>
#include <vector>

#include "nestseg/util.hpp"

extern "C" void openblas_set_num_threads(int);

namespace nestseg::ops {

namespace {

// BLAS runs single-threaded; batch-level parallelism is handled here and
// gradients are always accumulated serially, so results are bit-deterministic
// for the thread count 1 used by the test configuration.
bool init_blas() {
  openblas_set_num_threads(1);
  return true;
}

void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, std::int64_t m, std::int64_t n, std::int64_t k,
          float alpha, const float* a, std::int64_t lda, const float* b, std::int64_t ldb,
          float beta, float* c, std::int64_t ldc) {
  static const bool blas_ready = init_blas();
  (void)blas_ready;
  cblas_sgemm(CblasRowMajor, ta, tb, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb), beta,
              c, static_cast<int>(ldc));
}

void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, std::int64_t m, std::int64_t n, std::int64_t k,
          double alpha, const double* a, std::int64_t lda, const double* b, std::int64_t ldb,
          double beta, double* c, std::int64_t ldc) {
  static const bool blas_ready = init_blas();
  (void)blas_ready;
  cblas_dgemm(CblasRowMajor, ta, tb, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb), beta,
              c, static_cast<int>(ldc));
}

template <typename T>
std::vector<T>& scratch_col() {
  thread_local std::vector<T> buf;
  return buf;
}

template <typename T>
std::vector<T>& scratch_colgrad() {
  thread_local std::vector<T> buf;
  return buf;
}

// col is [Cin*k*k, H*W]; one image plane of x at a time.
template <typename T>
void im2col(const T* x, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t k, T* col) {
  const std::int64_t pad = k / 2;
  const std::int64_t hw = h * w;
  for (std::int64_t c = 0; c < cin; ++c) {
    const T* plane = x + c * hw;
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * hw;
        for (std::int64_t y = 0; y < h; ++y) {
          T* dst = row + y * w;
          const std::int64_t yi = y + ky - pad;
          if (yi < 0 || yi >= h) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          const T* src = plane + yi * w;
          const std::int64_t shift = kx - pad;  // input column = output column + shift
          std::int64_t x0 = std::max<std::int64_t>(0, -shift);
          std::int64_t x1 = std::min<std::int64_t>(w, w - shift);
          if (x0 > 0) std::fill(dst, dst + x0, T(0));
          if (x1 > x0) std::memcpy(dst + x0, src + x0 + shift, sizeof(T) * (x1 - x0));
          if (x1 < w) std::fill(dst + std::max<std::int64_t>(x1, x0), dst + w, T(0));
        }
      }
    }
  }
}

// inverse of im2col: scatter-adds col rows back into the image plane
template <typename T>
void col2im_acc(const T* col, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t k,
                T* gx) {
  const std::int64_t pad = k / 2;
  const std::int64_t hw = h * w;
  for (std::int64_t c = 0; c < cin; ++c) {
    T* plane = gx + c * hw;
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * hw;
        for (std::int64_t y = 0; y < h; ++y) {
          const std::int64_t yi = y + ky - pad;
          if (yi < 0 || yi >= h) continue;
          const T* src = row + y * w;
          T* dst = plane + yi * w;
          const std::int64_t shift = kx - pad;
          const std::int64_t x0 = std::max<std::int64_t>(0, -shift);
          const std::int64_t x1 = std::min<std::int64_t>(w, w - shift);
          for (std::int64_t xo = x0; xo < x1; ++xo) dst[xo + shift] += src[xo];
        }
      }
    }
  }
}

template <typename T>
void conv_shapes(const TensorBase<T>& x, const TensorBase<T>& w, const TensorBase<T>& b,
                 std::int64_t& cin, std::int64_t& cout, std::int64_t& k) {
  if (x.rank() != 4 || w.rank() != 4 || b.rank() != 1)
    fail("conv2d: expected 4-D input, 4-D weight, 1-D bias; got input " + x.shape_str() +
         ", weight " + w.shape_str() + ", bias " + b.shape_str());
  cout = w.dim(0);
  cin = w.dim(1);
  k = w.dim(2);
  if (w.dim(3) != k || (k != 3 && k != 1))
    fail("conv2d: kernel must be 3x3 (or 1x1 for heads); weight " + w.shape_str());
  if (x.dim(1) != cin)
    fail("conv2d: input channels do not match weight: input " + x.shape_str() + ", weight " +
         w.shape_str());
  if (b.dim(0) != cout)
    fail("conv2d: bias does not match weight output channels: bias " + b.shape_str() +
         ", weight " + w.shape_str());
}

void run_batch(std::int64_t batch, const std::function<void(std::int64_t)>& body) {
  const int threads = intra_op_threads();
  if (threads <= 1 || batch <= 1) {
    for (std::int64_t i = 0; i < batch; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<std::int64_t> next{0};
  const int n = static_cast<int>(std::min<std::int64_t>(threads, batch));
  for (int t = 0; t < n; ++t)
    pool.emplace_back([&] {
      for (std::int64_t i = next.fetch_add(1); i < batch; i = next.fetch_add(1)) body(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace

template <typename T>
TensorBase<T> conv2d(const TensorBase<T>& x, const TensorBase<T>& w, const TensorBase<T>& b) {
  std::int64_t cin, cout, k;
  conv_shapes(x, w, b, cin, cout, k);
  const std::int64_t batch = x.dim(0), h = x.dim(2), wd = x.dim(3);
  const std::int64_t hw = h * wd, kk = cin * k * k;
  TensorBase<T> out({batch, cout, h, wd});
  run_batch(batch, [&](std::int64_t bi) {
    auto& col = scratch_col<T>();
    col.resize(static_cast<std::size_t>(kk * hw));
    im2col(x.data() + bi * cin * hw, cin, h, wd, k, col.data());
    T* o = out.data() + bi * cout * hw;
    gemm(CblasNoTrans, CblasNoTrans, cout, hw, kk, T(1), w.data(), kk, col.data(), hw, T(0), o, hw);
    for (std::int64_t co = 0; co < cout; ++co) {
      const T bias = b[co];
      T* row = o + co * hw;
      for (std::int64_t p = 0; p < hw; ++p) row[p] += bias;
    }
  });
  NESTSEG_DEBUG_CHECK_FINITE(out, "conv2d");
  return out;
}

template <typename T>
void conv2d_backward(const TensorBase<T>& x, const TensorBase<T>& w, const TensorBase<T>& gout,
                     TensorBase<T>* gx, TensorBase<T>* gw, TensorBase<T>* gb) {
  std::int64_t cin, cout, k;
  TensorBase<T> bias_dummy({w.dim(0)});
  conv_shapes(x, w, bias_dummy, cin, cout, k);
  const std::int64_t batch = x.dim(0), h = x.dim(2), wd = x.dim(3);
  const std::int64_t hw = h * wd, kk = cin * k * k;
  if (!gout.same_shape(TensorBase<T>({batch, cout, h, wd})))
    fail("conv2d_backward: upstream gradient " + gout.shape_str() + " does not match output shape");

  for (std::int64_t bi = 0; bi < batch; ++bi) {
    const T* go = gout.data() + bi * cout * hw;
    if (gb) {
      for (std::int64_t co = 0; co < cout; ++co) {
        T s = 0;
        const T* row = go + co * hw;
        for (std::int64_t p = 0; p < hw; ++p) s += row[p];
        (*gb)[co] += s;
      }
    }
    if (gw) {
      auto& col = scratch_col<T>();
      col.resize(static_cast<std::size_t>(kk * hw));
      im2col(x.data() + bi * cin * hw, cin, h, wd, k, col.data());
      gemm(CblasNoTrans, CblasTrans, cout, kk, hw, T(1), go, hw, col.data(), hw, T(1), gw->data(),
           kk);
    }
    if (gx) {
      auto& colgrad = scratch_colgrad<T>();
      colgrad.resize(static_cast<std::size_t>(kk * hw));
      gemm(CblasTrans, CblasNoTrans, kk, hw, cout, T(1), w.data(), kk, go, hw, T(0),
           colgrad.data(), hw);
      col2im_acc(colgrad.data(), cin, h, wd, k, gx->data() + bi * cin * hw);
    }
  }
}

template <typename T>
TensorBase<T> maxpool2(const TensorBase<T>& x, std::vector<std::int64_t>* argmax) {
  if (x.rank() != 4) fail("maxpool2: expected 4-D input, got " + x.shape_str());
  const std::int64_t batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    fail("maxpool2: spatial dimensions must be even, got " + x.shape_str());
  const std::int64_t ho = h / 2, wo = w / 2;
  TensorBase<T> out({batch, c, ho, wo});
  if (argmax) argmax->resize(static_cast<std::size_t>(out.numel()));
  std::int64_t oi = 0;
  for (std::int64_t bc = 0; bc < batch * c; ++bc) {
    const T* plane = x.data() + bc * h * w;
    const std::int64_t base = bc * h * w;
    for (std::int64_t y = 0; y < ho; ++y) {
      for (std::int64_t xo = 0; xo < wo; ++xo, ++oi) {
        const std::int64_t p0 = (2 * y) * w + 2 * xo;
        std::int64_t best = p0;
        T bv = plane[p0];
        const std::int64_t cand[3] = {p0 + 1, p0 + w, p0 + w + 1};
        for (std::int64_t pc : cand) {
          if (plane[pc] > bv) {  // strict: ties keep the row-major earliest
            bv = plane[pc];
            best = pc;
          }
        }
        out[oi] = bv;
        if (argmax) (*argmax)[static_cast<std::size_t>(oi)] = base + best;
      }
    }
  }
  NESTSEG_DEBUG_CHECK_FINITE(out, "maxpool2");
  return out;
}

template <typename T>
TensorBase<T> maxpool2_backward(const std::vector<std::int64_t>& argmax,
                                const std::vector<std::int64_t>& input_shape,
                                const TensorBase<T>& gout) {
  TensorBase<T> gx(input_shape);
  if (argmax.size() != static_cast<std::size_t>(gout.numel()))
    fail("maxpool2_backward: argmax record does not match upstream gradient");
  for (std::int64_t i = 0; i < gout.numel(); ++i) gx[argmax[static_cast<std::size_t>(i)]] += gout[i];
  return gx;
}

template <typename T>
TensorBase<T> upsample2(const TensorBase<T>& x) {
  if (x.rank() != 4) fail("upsample2: expected 4-D input, got " + x.shape_str());
  const std::int64_t batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  TensorBase<T> out({batch, c, 2 * h, 2 * w});
  for (std::int64_t bc = 0; bc < batch * c; ++bc) {
    const T* src = x.data() + bc * h * w;
    T* dst = out.data() + bc * 4 * h * w;
    for (std::int64_t y = 0; y < h; ++y) {
      T* row0 = dst + (2 * y) * 2 * w;
      for (std::int64_t xi = 0; xi < w; ++xi) {
        const T v = src[y * w + xi];
        row0[2 * xi] = v;
        row0[2 * xi + 1] = v;
      }
      std::memcpy(row0 + 2 * w, row0, sizeof(T) * 2 * w);
    }
  }
  return out;
}

template <typename T>
TensorBase<T> upsample2_backward(const TensorBase<T>& gout) {
  if (gout.rank() != 4) fail("upsample2_backward: expected 4-D gradient");
  const std::int64_t batch = gout.dim(0), c = gout.dim(1), ho = gout.dim(2), wo = gout.dim(3);
  if (ho % 2 != 0 || wo % 2 != 0) fail("upsample2_backward: odd output size " + gout.shape_str());
  const std::int64_t h = ho / 2, w = wo / 2;
  TensorBase<T> gx({batch, c, h, w});
  for (std::int64_t bc = 0; bc < batch * c; ++bc) {
    const T* src = gout.data() + bc * ho * wo;
    T* dst = gx.data() + bc * h * w;
    for (std::int64_t y = 0; y < h; ++y) {
      const T* r0 = src + (2 * y) * wo;
      const T* r1 = r0 + wo;
      for (std::int64_t xi = 0; xi < w; ++xi)
        dst[y * w + xi] = r0[2 * xi] + r0[2 * xi + 1] + r1[2 * xi] + r1[2 * xi + 1];
    }
  }
  return gx;
}

template <typename T>
TensorBase<T> concat_channels(const std::vector<const TensorBase<T>*>& xs) {
  if (xs.empty()) fail("concat_channels: empty input list");
  const auto& first = *xs.front();
  if (first.rank() != 4) fail("concat_channels: expected 4-D inputs, got " + first.shape_str());
  const std::int64_t batch = first.dim(0), h = first.dim(2), w = first.dim(3);
  std::int64_t ctotal = 0;
  for (const auto* x : xs) {
    if (x->rank() != 4 || x->dim(0) != batch || x->dim(2) != h || x->dim(3) != w)
      fail("concat_channels: input " + x->shape_str() + " does not match leading input " +
           first.shape_str() + " in batch/spatial dims (topology bug)");
    ctotal += x->dim(1);
  }
  TensorBase<T> out({batch, ctotal, h, w});
  const std::int64_t hw = h * w;
  for (std::int64_t bi = 0; bi < batch; ++bi) {
    T* dst = out.data() + bi * ctotal * hw;
    for (const auto* x : xs) {
      const std::int64_t n = x->dim(1) * hw;
      std::memcpy(dst, x->data() + bi * n, sizeof(T) * n);
      dst += n;
    }
  }
  return out;
}

template <typename T>
TensorBase<T> slice_channels(const TensorBase<T>& x, std::int64_t c0, std::int64_t c1) {
  if (x.rank() != 4) fail("slice_channels: expected 4-D input, got " + x.shape_str());
  if (c0 < 0 || c1 <= c0 || c1 > x.dim(1))
    fail("slice_channels: bad channel range [" + std::to_string(c0) + "," + std::to_string(c1) +
         ") for " + x.shape_str());
  const std::int64_t batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  TensorBase<T> out({batch, c1 - c0, x.dim(2), x.dim(3)});
  for (std::int64_t bi = 0; bi < batch; ++bi)
    std::memcpy(out.data() + bi * (c1 - c0) * hw, x.data() + (bi * c + c0) * hw,
                sizeof(T) * (c1 - c0) * hw);
  return out;
}

template <typename T>
TensorBase<T> relu(const TensorBase<T>& x) {
  TensorBase<T> out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
TensorBase<T> relu_backward(const TensorBase<T>& x, const TensorBase<T>& gout) {
  TensorBase<T> gx(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) gx[i] = x[i] > T(0) ? gout[i] : T(0);
  return gx;
}

template <typename T>
TensorBase<T> sigmoid(const TensorBase<T>& x) {
  TensorBase<T> out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const T v = x[i];
    // split by sign to avoid exp overflow
    out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  NESTSEG_DEBUG_CHECK_FINITE(out, "sigmoid");
  return out;
}

template <typename T>
TensorBase<T> sigmoid_backward(const TensorBase<T>& y, const TensorBase<T>& gout) {
  TensorBase<T> gx(y.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) gx[i] = gout[i] * y[i] * (T(1) - y[i]);
  return gx;
}

template <typename T>
TensorBase<T> add(const TensorBase<T>& a, const TensorBase<T>& b) {
  if (!a.same_shape(b)) fail("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  TensorBase<T> out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
TensorBase<T> mul(const TensorBase<T>& a, const TensorBase<T>& b) {
  if (!a.same_shape(b)) fail("mul: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  TensorBase<T> out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
TensorBase<T> scale(const TensorBase<T>& a, T factor) {
  TensorBase<T> out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * factor;
  return out;
}

template <typename T>
TensorBase<T> mean_of(const std::vector<const TensorBase<T>*>& xs) {
  if (xs.empty()) fail("mean_of: empty input list");
  TensorBase<T> out(xs.front()->shape());
  for (const auto* x : xs) {
    if (!x->same_shape(out))
      fail("mean_of: shape mismatch " + x->shape_str() + " vs " + out.shape_str());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += (*x)[i];
  }
  const T inv = T(1) / static_cast<T>(xs.size());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= inv;
  return out;
}

template <typename T>
TensorBase<T> sum_all(const TensorBase<T>& x) {
  T s = 0;
  for (std::int64_t i = 0; i < x.numel(); ++i) s += x[i];
  return TensorBase<T>({1}, {s});
}

template <typename T>
void axpy(TensorBase<T>& y, T alpha, const TensorBase<T>& x) {
  if (!y.same_shape(x)) fail("axpy: shape mismatch " + y.shape_str() + " vs " + x.shape_str());
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] += alpha * x[i];
}

#define NESTSEG_INSTANTIATE_OPS(T)                                                              \
  template TensorBase<T> conv2d<T>(const TensorBase<T>&, const TensorBase<T>&,                  \
                                   const TensorBase<T>&);                                       \
  template void conv2d_backward<T>(const TensorBase<T>&, const TensorBase<T>&,                 \
                                   const TensorBase<T>&, TensorBase<T>*, TensorBase<T>*,        \
                                   TensorBase<T>*);                                             \
  template TensorBase<T> maxpool2<T>(const TensorBase<T>&, std::vector<std::int64_t>*);        \
  template TensorBase<T> maxpool2_backward<T>(const std::vector<std::int64_t>&,                \
                                              const std::vector<std::int64_t>&,                \
                                              const TensorBase<T>&);                           \
  template TensorBase<T> upsample2<T>(const TensorBase<T>&);                                   \
  template TensorBase<T> upsample2_backward<T>(const TensorBase<T>&);                          \
  template TensorBase<T> concat_channels<T>(const std::vector<const TensorBase<T>*>&);         \
  template TensorBase<T> slice_channels<T>(const TensorBase<T>&, std::int64_t, std::int64_t);  \
  template TensorBase<T> relu<T>(const TensorBase<T>&);                                        \
  template TensorBase<T> relu_backward<T>(const TensorBase<T>&, const TensorBase<T>&);         \
  template TensorBase<T> sigmoid<T>(const TensorBase<T>&);                                     \
  template TensorBase<T> sigmoid_backward<T>(const TensorBase<T>&, const TensorBase<T>&);      \
  template TensorBase<T> add<T>(const TensorBase<T>&, const TensorBase<T>&);                   \
  template TensorBase<T> mul<T>(const TensorBase<T>&, const TensorBase<T>&);                   \
  template TensorBase<T> scale<T>(const TensorBase<T>&, T);                                    \
  template TensorBase<T> mean_of<T>(const std::vector<const TensorBase<T>*>&);                 \
  template TensorBase<T> sum_all<T>(const TensorBase<T>&);                                     \
  template void axpy<T>(TensorBase<T>&, T, const TensorBase<T>&);

NESTSEG_INSTANTIATE_OPS(float)
NESTSEG_INSTANTIATE_OPS(double)

#undef NESTSEG_INSTANTIATE_OPS

}  // namespace nestseg::ops
