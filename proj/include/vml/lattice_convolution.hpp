#pragma once
/**
 * @file lattice_convolution.hpp
 * @brief Discrete convolution of a box of lattice values with an even,
 *        symmetric 3x3 matrix kernel tabulated on lattice offsets, via
 *        zero-padded FFTs (FFTW).
 *
 *   out_i(b) = sum_{b'} sum_j K_ij(b - b') in_j(b')
 *
 * The kernel is even in the offset, so its transform is real; only the six
 * independent components of the real transform are kept.
 */

#include <algorithm>
#include <array>
#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <vector>

#include <fftw3.h>

#include "vml/velocity_grid.hpp"

namespace vml {

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

/// Smallest size >= n whose prime factors are all in {2, 3, 5, 7}.
inline int fft_friendly_size(int n) {
  for (int p = std::max(n, 1);; ++p) {
    int r = p;
    for (int f : {2, 3, 5, 7}) {
      while (r % f == 0) r /= f;
    }
    if (r == 1) return p;
  }
}

struct FftwDeleter {
  void operator()(fftw_complex* p) const { fftw_free(p); }
};
using FftwBuffer = std::unique_ptr<fftw_complex[], FftwDeleter>;

inline FftwBuffer fftw_buffer(std::size_t n) {
  return FftwBuffer(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n)));
}

// index of the symmetric pair (i, j) in xx, xy, xz, yy, yz, zz order
inline constexpr int sym_index(int i, int j) {
  if (i > j) std::swap(i, j);
  return i == 0 ? j : (i == 1 ? 2 + j : 5);
}

}  // namespace detail

class LatticeConvolver {
 public:
  /// `kernel(o0, o1, o2)` returns the 3x3 kernel at integer lattice offset o.
  template <class KernelFn>
  LatticeConvolver(int box, KernelFn&& kernel) : b_(box) {
    P_ = detail::fft_friendly_size(2 * box - 1);
    const std::size_t PPP = volume();
    auto buf = detail::fftw_buffer(PPP);
    auto buf3 = detail::fftw_buffer(3 * PPP);
    {
      std::lock_guard lock(detail::fftw_planner_mutex());
      fwd_ = fftw_plan_dft_3d(P_, P_, P_, buf.get(), buf.get(), FFTW_FORWARD, FFTW_ESTIMATE);
      inv_ = fftw_plan_dft_3d(P_, P_, P_, buf.get(), buf.get(), FFTW_BACKWARD, FFTW_ESTIMATE);
      plan_pruned(buf3.get());
    }
    for (auto& c : khat_) c.assign(PPP, 0.0);
    std::vector<Mat3> table(PPP, Mat3::Zero());
    for (int a = -(b_ - 1); a <= b_ - 1; ++a) {
      for (int c = -(b_ - 1); c <= b_ - 1; ++c) {
        for (int d = -(b_ - 1); d <= b_ - 1; ++d) {
          table[wrap(a, c, d)] = kernel(a, c, d);
        }
      }
    }
    for (int i = 0; i < 3; ++i) {
      for (int j = i; j < 3; ++j) {
        for (std::size_t q = 0; q < PPP; ++q) {
          buf[q][0] = table[q](i, j);
          buf[q][1] = 0.0;
        }
        fftw_execute_dft(fwd_, buf.get(), buf.get());
        auto& dst = khat_[detail::sym_index(i, j)];
        const double scale = 1.0 / static_cast<double>(PPP);
        for (std::size_t q = 0; q < PPP; ++q) dst[q] = buf[q][0] * scale;
      }
    }
    // the transform is even (diagonal) or odd in exactly two frequencies
    // (off-diagonal); keep one octant
    H_ = P_ / 2 + 1;
    for (int c = 0; c < 6; ++c) {
      fold_[c].assign(static_cast<std::size_t>(H_) * H_ * H_, 0.0);
      for (int a = 0; a < H_; ++a) {
        for (int b = 0; b < H_; ++b) {
          for (int d = 0; d < H_; ++d) {
            fold_[c][(static_cast<std::size_t>(a) * H_ + b) * H_ + d] =
                khat_[c][(static_cast<std::size_t>(a) * P_ + b) * P_ + d];
          }
        }
      }
    }
  }

  LatticeConvolver(const LatticeConvolver&) = delete;
  LatticeConvolver& operator=(const LatticeConvolver&) = delete;

  ~LatticeConvolver() {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    for (auto* pl : stages_) fftw_destroy_plan(pl);
  }

  int box() const { return b_; }
  int fft_size() const { return P_; }
  std::size_t box_volume() const { return static_cast<std::size_t>(b_) * b_ * b_; }

  /// Vector convolution. `in` and `out` hold three components of box_volume() values each.
  void apply(const std::array<std::span<const cplx>, 3>& in,
             const std::array<std::span<cplx>, 3>& out) const {
    const std::size_t PPP = volume();
    thread_local std::vector<double> raw;
    raw.assign(6 * PPP + 2, 0.0);
    // keep FFTW's alignment expectations: plans were made on fftw_malloc memory
    fftw_complex* base = reinterpret_cast<fftw_complex*>(raw.data());
    if (fftw_alignment_of(raw.data()) != align_) base = reinterpret_cast<fftw_complex*>(raw.data() + 1);
    fftw_complex* buf[3] = {base, base + PPP, base + 2 * PPP};
    for (int j = 0; j < 3; ++j) scatter_box(in[j], buf[j]);
    for (int st = 0; st < 3; ++st) fftw_execute_dft(stages_[st], base, base);
    multiply_folded(buf);
    for (int st = 3; st < 6; ++st) fftw_execute_dft(stages_[st], base, base);
    for (int i = 0; i < 3; ++i) gather(buf[i], out[i]);
  }

  /// Matrix-valued convolution of a real scalar density: out(b) = sum K(b - b') rho(b').
  std::vector<Mat3> apply_scalar(std::span<const double> rho) const {
    const std::size_t PPP = volume();
    auto src = detail::fftw_buffer(PPP);
    auto tmp = detail::fftw_buffer(PPP);
    std::vector<cplx> in(rho.begin(), rho.end());
    scatter(in, src.get());
    fftw_execute_dft(fwd_, src.get(), src.get());
    std::vector<Mat3> out(box_volume(), Mat3::Zero());
    std::vector<cplx> comp(box_volume());
    for (int i = 0; i < 3; ++i) {
      for (int j = i; j < 3; ++j) {
        const auto& k = khat_[detail::sym_index(i, j)];
        for (std::size_t q = 0; q < PPP; ++q) {
          tmp[q][0] = k[q] * src[q][0];
          tmp[q][1] = k[q] * src[q][1];
        }
        fftw_execute_dft(inv_, tmp.get(), tmp.get());
        gather(tmp.get(), comp);
        for (std::size_t b = 0; b < box_volume(); ++b) {
          out[b](i, j) = comp[b].real();
          out[b](j, i) = comp[b].real();
        }
      }
    }
    return out;
  }

 private:
  std::size_t volume() const { return static_cast<std::size_t>(P_) * P_ * P_; }
  std::size_t wrap(int a, int c, int d) const {
    auto w = [&](int x) { return static_cast<std::size_t>(x < 0 ? x + P_ : x); };
    return (w(a) * P_ + w(c)) * P_ + w(d);
  }
  // 1-D stages of a 3-D transform of three stacked P^3 arrays, skipping lines
  // that are identically zero (forward) or not needed in the box (backward).
  void plan_pruned(fftw_complex* buf) {
    align_ = fftw_alignment_of(reinterpret_cast<double*>(buf));
    const int P = P_, b = b_, P2 = P_ * P_, V = static_cast<int>(volume());
    auto stage = [&](fftw_iodim dim, std::vector<fftw_iodim> many, int sign) {
      many.insert(many.begin(), fftw_iodim{3, V, V});
      return fftw_plan_guru_dft(1, &dim, static_cast<int>(many.size()), many.data(), buf, buf,
                                sign, FFTW_ESTIMATE);
    };
    const fftw_iodim dz{P, 1, 1}, dy{P, P, P}, dx{P, P2, P2};
    stages_[0] = stage(dx, {{b, P, P}, {b, 1, 1}}, FFTW_FORWARD);
    stages_[1] = stage(dy, {{P, P2, P2}, {b, 1, 1}}, FFTW_FORWARD);
    stages_[2] = stage(dz, {{P2, P, P}}, FFTW_FORWARD);
    stages_[3] = stage(dz, {{P2, P, P}}, FFTW_BACKWARD);
    stages_[4] = stage(dy, {{P, P2, P2}, {b, 1, 1}}, FFTW_BACKWARD);
    stages_[5] = stage(dx, {{b, P, P}, {b, 1, 1}}, FFTW_BACKWARD);
    for (auto* pl : stages_) {
      if (!pl) throw std::runtime_error("FFT planning failed");
    }
  }
  void multiply_folded(fftw_complex* const* buf) const {
    auto fold = [&](int w, double& sgn) {
      sgn = (2 * w > P_) ? -1.0 : 1.0;
      return 2 * w > P_ ? P_ - w : w;
    };
    const double* k00 = fold_[0].data();
    const double* k01 = fold_[1].data();
    const double* k02 = fold_[2].data();
    const double* k11 = fold_[3].data();
    const double* k12 = fold_[4].data();
    const double* k22 = fold_[5].data();
    std::vector<int> fz(P_);
    std::vector<double> sz(P_);
    for (int c = 0; c < P_; ++c) fz[c] = fold(c, sz[c]);
    for (int a = 0; a < P_; ++a) {
      double s0;
      const int fa = fold(a, s0);
      for (int b = 0; b < P_; ++b) {
        double s1;
        const int fb = fold(b, s1);
        const std::size_t row = (static_cast<std::size_t>(a) * P_ + b) * P_;
        const std::size_t frow = (static_cast<std::size_t>(fa) * H_ + fb) * H_;
        const double s01 = s0 * s1;
        double* u0 = buf[0][row];
        double* u1 = buf[1][row];
        double* u2 = buf[2][row];
        for (int c = 0; c < P_; ++c) {
          const std::size_t q = frow + fz[c];
          const double a00 = k00[q], a11 = k11[q], a22 = k22[q];
          const double a01 = s01 * k01[q], a02 = s0 * sz[c] * k02[q], a12 = s1 * sz[c] * k12[q];
          const double x0r = u0[2 * c], x0i = u0[2 * c + 1];
          const double x1r = u1[2 * c], x1i = u1[2 * c + 1];
          const double x2r = u2[2 * c], x2i = u2[2 * c + 1];
          u0[2 * c] = a00 * x0r + a01 * x1r + a02 * x2r;
          u0[2 * c + 1] = a00 * x0i + a01 * x1i + a02 * x2i;
          u1[2 * c] = a01 * x0r + a11 * x1r + a12 * x2r;
          u1[2 * c + 1] = a01 * x0i + a11 * x1i + a12 * x2i;
          u2[2 * c] = a02 * x0r + a12 * x1r + a22 * x2r;
          u2[2 * c + 1] = a02 * x0i + a12 * x1i + a22 * x2i;
        }
      }
    }
  }
  // scatter into a buffer that is already zero
  void scatter_box(std::span<const cplx> v, fftw_complex* dst) const {
    std::size_t b = 0;
    for (int i = 0; i < b_; ++i) {
      for (int j = 0; j < b_; ++j) {
        fftw_complex* row = dst + (static_cast<std::size_t>(i) * P_ + j) * P_;
        for (int k = 0; k < b_; ++k, ++b) {
          row[k][0] = v[b].real();
          row[k][1] = v[b].imag();
        }
      }
    }
  }
  void scatter(std::span<const cplx> v, fftw_complex* dst) const {
    std::fill_n(&dst[0][0], 2 * volume(), 0.0);
    std::size_t b = 0;
    for (int i = 0; i < b_; ++i) {
      for (int j = 0; j < b_; ++j) {
        fftw_complex* row = dst + (static_cast<std::size_t>(i) * P_ + j) * P_;
        for (int k = 0; k < b_; ++k, ++b) {
          row[k][0] = v[b].real();
          row[k][1] = v[b].imag();
        }
      }
    }
  }
  void gather(const fftw_complex* src, std::span<cplx> v) const {
    std::size_t b = 0;
    for (int i = 0; i < b_; ++i) {
      for (int j = 0; j < b_; ++j) {
        const fftw_complex* row = src + (static_cast<std::size_t>(i) * P_ + j) * P_;
        for (int k = 0; k < b_; ++k, ++b) v[b] = cplx(row[k][0], row[k][1]);
      }
    }
  }

  int b_;
  int P_ = 0;
  fftw_plan fwd_ = nullptr;
  fftw_plan inv_ = nullptr;
  std::array<fftw_plan, 6> stages_{};
  int align_ = 0;
  std::array<std::vector<double>, 6> khat_;
  std::array<std::vector<double>, 6> fold_;
  int H_ = 0;
};

}  // namespace vml
