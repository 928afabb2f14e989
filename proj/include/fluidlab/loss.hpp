#pragma once

// Training objective: reconstruction and prediction MSE on sigmoid outputs,
// the variance hinge on the encoder latent, the finite-difference gradient
// loss, and optional Sobel/spectral terms.

#include <array>
#include <cstddef>

#include "fluidlab/autodiff.hpp"
#include "fluidlab/field.hpp"

namespace fluidlab {

struct LossWeights {
  double recon = 1.0;
  double pred = 1.0;
  double variance = 0.5;
  double gradient = 1.0;
  double sigma_target = 1.0;
  double edge = 0.0;
  double freq = 0.0;
};

inline constexpr std::array<double, 9> kSobelX{-1, 0, 1, -2, 0, 2, -1, 0, 1};
inline constexpr std::array<double, 9> kSobelY{-1, -2, -1, 0, 0, 0, 1, 2, 1};

// ---------------------------------------------------------------------------
// Graph versions. Targets are constants.

inline ad::Var variance_loss(const ad::Var& z, double sigma_target) { return ad::variance_hinge(z, sigma_target); }

/// mean|∂x pred − ∂x target| + mean|∂y pred − ∂y target|.
inline ad::Var gradient_loss(const ad::Var& pred, const FieldGrid& target) {
  const ad::Var diff = ad::sub(pred, ad::Var::constant(target));
  return ad::add(ad::mean_abs(ad::finite_diff_x(diff)), ad::mean_abs(ad::finite_diff_y(diff)));
}

/// L1 between Sobel responses (x and y) plus L1 between log(1 + |DFT|) spectra.
inline ad::Var edge_loss(const ad::Var& pred, const FieldGrid& target) {
  const ad::Var diff = ad::sub(pred, ad::Var::constant(target));
  return ad::add(ad::mean_abs(ad::filter3x3(diff, kSobelX)), ad::mean_abs(ad::filter3x3(diff, kSobelY)));
}

inline ad::Var freq_loss(const ad::Var& pred, const FieldGrid& target) {
  const ad::Var t = ad::dft_log_magnitude(ad::Var::constant(target));
  return ad::mean_abs(ad::sub(ad::dft_log_magnitude(pred), t));
}

inline ad::Var edge_freq_loss(const ad::Var& pred, const FieldGrid& target, double w_edge = 1.0,
                              double w_freq = 1.0) {
  return ad::add(ad::scale(edge_loss(pred, target), w_edge), ad::scale(freq_loss(pred, target), w_freq));
}

struct LossTermsT {
  ad::Var total;
  double recon = 0.0, pred = 0.0, variance = 0.0, gradient = 0.0, edge = 0.0, freq = 0.0;
};

/// Weighted sum of all terms. Image terms compare sigmoid(logits) to targets;
/// the gradient, edge and frequency terms average recon and pred halves.
inline LossTermsT total_loss(const FieldGrid& x_t, const FieldGrid& x_t1, const ad::Var& recon_logits,
                             const ad::Var& pred_logits, const ad::Var& z_t, const LossWeights& w) {
  const ad::Var recon = ad::sigmoid(recon_logits);
  const ad::Var pred = ad::sigmoid(pred_logits);
  LossTermsT out;
  const ad::Var l_recon = ad::mse(recon, x_t);
  const ad::Var l_pred = ad::mse(pred, x_t1);
  const ad::Var l_var = variance_loss(z_t, w.sigma_target);
  const ad::Var l_grad = ad::scale(ad::add(gradient_loss(recon, x_t), gradient_loss(pred, x_t1)), 0.5);
  ad::Var total = ad::add(ad::add(ad::scale(l_recon, w.recon), ad::scale(l_pred, w.pred)),
                          ad::add(ad::scale(l_var, w.variance), ad::scale(l_grad, w.gradient)));
  out.recon = l_recon.item();
  out.pred = l_pred.item();
  out.variance = l_var.item();
  out.gradient = l_grad.item();
  if (w.edge != 0.0) {
    const ad::Var l = ad::scale(ad::add(edge_loss(recon, x_t), edge_loss(pred, x_t1)), 0.5);
    out.edge = l.item();
    total = ad::add(total, ad::scale(l, w.edge));
  }
  if (w.freq != 0.0) {
    const ad::Var l = ad::scale(ad::add(freq_loss(recon, x_t), freq_loss(pred, x_t1)), 0.5);
    out.freq = l.item();
    total = ad::add(total, ad::scale(l, w.freq));
  }
  out.total = std::move(total);
  return out;
}

// ---------------------------------------------------------------------------
// Value versions

inline double variance_loss(const FieldGrid& z, double sigma_target = 1.0) {
  return variance_loss(ad::Var::constant(z), sigma_target).item();
}

inline double gradient_loss(const FieldGrid& pred, const FieldGrid& target) {
  return gradient_loss(ad::Var::constant(pred), target).item();
}

inline double edge_freq_loss(const FieldGrid& pred, const FieldGrid& target, double w_edge = 1.0,
                             double w_freq = 1.0) {
  return edge_freq_loss(ad::Var::constant(pred), target, w_edge, w_freq).item();
}

inline double total_loss(const FieldGrid& x_t, const FieldGrid& x_t1, const FieldGrid& recon_logits,
                         const FieldGrid& pred_logits, const FieldGrid& z_t, const LossWeights& w) {
  return total_loss(x_t, x_t1, ad::Var::constant(recon_logits), ad::Var::constant(pred_logits),
                    ad::Var::constant(z_t), w)
      .total.item();
}

}  // namespace fluidlab
