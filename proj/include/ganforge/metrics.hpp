#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "ganforge/architectures.hpp"
#include "ganforge/rng.hpp"

namespace ganforge {

/// One flattened image per row, in [-1, 1] units.
using ImageMatrix = Eigen::MatrixXd;

template <class T>
ImageMatrix to_matrix(const Tensor<T>& batch) {
  const std::int64_t n = batch.dim(0), d = batch.size() / std::max<std::int64_t>(n, 1);
  ImageMatrix m(n, d);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < d; ++j) m(i, j) = static_cast<double>(batch[i * d + j]);
  return m;
}

struct PcaBasis {
  Eigen::MatrixXd eigenvectors;  // k x D, orthonormal rows
  Eigen::VectorXd eigenvalues;   // k, descending
  Eigen::VectorXd mean;          // D
  double total_variance = 0.0;
  double explained_fraction = 0.0;

  int k() const { return static_cast<int>(eigenvalues.size()); }
  std::int64_t dimension() const { return mean.size(); }
};

/// Above this pixel count the covariance is never formed densely.
inline constexpr std::int64_t kDenseCovarianceLimit = 2048;
/// Above this sample count the Gram matrix is not formed either and a
/// randomized subspace iteration is used.
inline constexpr std::int64_t kGramLimit = 4096;

namespace detail {

/// Orthonormalizes the rows of `v` in place; rows that collapse are replaced
/// by directions orthogonal to all previous rows.
inline void orthonormalize_rows(Eigen::MatrixXd& v, Rng& rng) {
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    for (int attempt = 0;; ++attempt) {
      for (int pass = 0; pass < 2; ++pass) {
        for (Eigen::Index j = 0; j < i; ++j) v.row(i) -= v.row(i).dot(v.row(j)) * v.row(j);
      }
      const double n = v.row(i).norm();
      if (n > 1e-10) {
        v.row(i) /= n;
        break;
      }
      if (attempt > 8) throw Error("pca: cannot complete an orthonormal basis");
      for (Eigen::Index c = 0; c < v.cols(); ++c) v(i, c) = rng.normal();
    }
  }
}

/// Top-k eigenpairs of a symmetric matrix, descending, eigenvalues clamped
/// at zero.
inline void top_eigenpairs(const Eigen::MatrixXd& sym, int k, Eigen::VectorXd& values, Eigen::MatrixXd& vectors) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw Error("pca: eigendecomposition failed");
  const Eigen::Index n = sym.rows();
  values.resize(k);
  vectors.resize(k, n);
  for (int i = 0; i < k; ++i) {
    values(i) = std::max(0.0, es.eigenvalues()(n - 1 - i));
    vectors.row(i) = es.eigenvectors().col(n - 1 - i).transpose();
  }
}

}  // namespace detail

enum class PcaMethod { Auto, DenseCovariance, Gram, Randomized };

/// PCA of the rows of `x`: mean image plus the top-k eigenpairs of the
/// empirical covariance (normalized by N). Auto picks the dense covariance,
/// the Gram matrix or randomized subspace iteration by size.
inline PcaBasis fit_pca(const ImageMatrix& x, int k = 16, std::uint64_t seed = 0,
                        PcaMethod method = PcaMethod::Auto) {
  const std::int64_t n = x.rows(), d = x.cols();
  if (k < 1) throw Error("fit_pca: k must be >= 1");
  if (n < k + 1) {
    throw Error("fit_pca: need at least " + std::to_string(k + 1) + " images, got " + std::to_string(n));
  }
  if (d < k) throw Error("fit_pca: " + std::to_string(d) + " pixels cannot hold " + std::to_string(k) + " components");
  PcaBasis b;
  // Centered relative to the first row so repeated rows cancel exactly.
  const Eigen::RowVectorXd first = x.row(0);
  Eigen::MatrixXd xc = x.rowwise() - first;
  const Eigen::RowVectorXd shift = xc.colwise().mean();
  xc.rowwise() -= shift;
  b.mean = (first + shift).transpose();
  const double inv_n = 1.0 / static_cast<double>(n);
  b.total_variance = xc.squaredNorm() * inv_n;
  Rng rng(seed);
  if (method == PcaMethod::Auto) {
    method = d <= kDenseCovarianceLimit ? PcaMethod::DenseCovariance
             : n <= kGramLimit          ? PcaMethod::Gram
                                        : PcaMethod::Randomized;
  }

  if (method == PcaMethod::DenseCovariance) {
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    cov.selfadjointView<Eigen::Lower>().rankUpdate(xc.transpose(), inv_n);
    cov.triangularView<Eigen::StrictlyUpper>() = cov.transpose();
    detail::top_eigenpairs(cov, k, b.eigenvalues, b.eigenvectors);
  } else if (method == PcaMethod::Gram) {
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(xc, inv_n);
    gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
    Eigen::MatrixXd u;
    detail::top_eigenpairs(gram, k, b.eigenvalues, u);
    b.eigenvectors = u * xc;
    detail::orthonormalize_rows(b.eigenvectors, rng);
  } else {
    // Subspace iteration with oversampling on C = xc^T xc / n.
    const Eigen::Index p = std::min<Eigen::Index>(d, k + 16);
    Eigen::MatrixXd q(d, p);
    for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = rng.normal();
    for (int it = 0; it < 8; ++it) {
      Eigen::MatrixXd y = xc.transpose() * (xc * q);
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
      q = qr.householderQ() * Eigen::MatrixXd::Identity(d, p);
    }
    const Eigen::MatrixXd xq = xc * q;
    Eigen::MatrixXd small = xq.transpose() * xq * inv_n;
    Eigen::MatrixXd v;
    detail::top_eigenpairs(small, k, b.eigenvalues, v);
    b.eigenvectors = v * q.transpose();
    detail::orthonormalize_rows(b.eigenvectors, rng);
  }
  b.explained_fraction = b.total_variance > 0 ? b.eigenvalues.sum() / b.total_variance : 0.0;
  return b;
}

struct RealismResult {
  double rho = 0.0;
  /// Images identical to the reference mean; they contribute 0 to rho.
  std::int64_t zero_norm_images = 0;
};

/// Mean norm of the projection of each centered, unit-normalized image onto
/// the basis subspace. Lies in [0, 1].
inline RealismResult realism(const ImageMatrix& generated, const PcaBasis& basis) {
  if (generated.rows() < 1) throw Error("realism: no images");
  if (generated.cols() != basis.dimension()) {
    throw Error("realism: images have " + std::to_string(generated.cols()) + " pixels, basis expects " +
                std::to_string(basis.dimension()));
  }
  RealismResult r;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < generated.rows(); ++i) {
    const Eigen::VectorXd g = generated.row(i).transpose() - basis.mean;
    const double norm = g.norm();
    if (norm < 1e-12) {
      ++r.zero_norm_images;
      continue;
    }
    acc += (basis.eigenvectors * g).norm() / norm;
  }
  r.rho = acc / static_cast<double>(generated.rows());
  return r;
}

struct Diversity {
  double sigma = 0.0;
  int delta = 0;
  Eigen::VectorXd top_eigenvalues;
};

/// Total variance of the set and the number of its top-16 covariance
/// eigenvalues above 1% of that total.
inline Diversity diversity(const ImageMatrix& generated, int k = 16) {
  if (generated.rows() < k + 1) {
    throw Error("diversity: need at least " + std::to_string(k + 1) + " images, got " +
                std::to_string(generated.rows()));
  }
  PcaBasis b = fit_pca(generated, k);
  Diversity out{b.total_variance, 0, b.eigenvalues};
  for (Eigen::Index i = 0; i < b.eigenvalues.size(); ++i) out.delta += b.eigenvalues(i) > 0.01 * b.total_variance;
  return out;
}

struct MetricsReport {
  double rho = 0.0;
  double sigma = 0.0;
  int delta = 0;
  double explained_fraction = 0.0;
  std::int64_t sample_count = 0;
  std::int64_t zero_norm_images = 0;

  nlohmann::json to_json() const {
    return {{"rho", rho},
            {"sigma", sigma},
            {"delta", delta},
            {"explained_fraction", explained_fraction},
            {"sample_count", sample_count},
            {"zero_norm_images", zero_norm_images}};
  }
};

inline MetricsReport evaluate_sets(const ImageMatrix& reference, const ImageMatrix& generated, int k = 16) {
  PcaBasis basis = fit_pca(reference, k);
  RealismResult r = realism(generated, basis);
  Diversity d = diversity(generated, k);
  return {r.rho, d.sigma, d.delta, basis.explained_fraction, generated.rows(), r.zero_norm_images};
}

/// Generator outputs for `latents` in inference mode, `chunk` rows at a time.
template <class T>
Tensor<T> generate(Network<T>& generator, const Tensor<T>& latents, std::int64_t chunk = 64) {
  NoGrad guard;
  ForwardContext<T> ctx;
  ctx.mode = Mode::Eval;
  const std::int64_t n = latents.dim(0), dim = latents.dim(1);
  Tensor<T> out;
  std::vector<T> data;
  Shape frame;
  for (std::int64_t s = 0; s < n; s += chunk) {
    const std::int64_t m = std::min(chunk, n - s);
    Tensor<T> z(Shape{m, dim}, std::vector<T>(latents.ptr() + s * dim, latents.ptr() + (s + m) * dim));
    Tensor<T> y = generator.forward(Var<T>(std::move(z)), ctx).value();
    frame = y.shape();
    data.insert(data.end(), y.data().begin(), y.data().end());
  }
  frame[0] = n;
  return Tensor<T>(frame, std::move(data));
}

/// Latents (1 - t) z_a + t z_b for t = 0, 1/(steps-1), ..., 1. Interior
/// points are renormalized for normalized-Gaussian latent spaces; the
/// endpoints are the inputs themselves.
template <class T>
Tensor<T> interpolation_latents(const ModelSpec& spec, const Tensor<T>& z_a, const Tensor<T>& z_b, int steps) {
  if (steps < 2) throw Error("interpolate: steps must be >= 2");
  const std::int64_t dim = spec.latent_dim;
  if (z_a.size() != dim || z_b.size() != dim) {
    throw Error("interpolate: latents must have " + std::to_string(dim) + " entries");
  }
  Tensor<T> z(Shape{steps, dim});
  for (int s = 0; s < steps; ++s) {
    T* row = z.ptr() + s * dim;
    if (s == 0 || s == steps - 1) {
      const Tensor<T>& src = s == 0 ? z_a : z_b;
      std::copy_n(src.ptr(), dim, row);
      continue;
    }
    const double t = static_cast<double>(s) / (steps - 1);
    for (std::int64_t j = 0; j < dim; ++j) row[j] = static_cast<T>((1.0 - t) * z_a[j] + t * z_b[j]);
    if (spec.latent_dist == LatentDist::NormalizedGaussian) {
      Tensor<T> view(Shape{1, dim}, std::vector<T>(row, row + dim));
      normalize_latent_rows(view);
      std::copy_n(view.ptr(), dim, row);
    }
  }
  return z;
}

/// Interpolation frames, each generated on its own so every frame equals a
/// direct single-image generation at its latent.
template <class T>
Tensor<T> interpolate(Network<T>& generator, const Tensor<T>& z_a, const Tensor<T>& z_b, int steps) {
  return generate(generator, interpolation_latents(generator.spec(), z_a, z_b, steps), 1);
}

}  // namespace ganforge
