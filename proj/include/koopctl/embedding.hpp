#pragma once

#include <cstdint>

#include "koopctl/nn.hpp"

namespace koopctl {

enum class EncoderRole { kQuery, kKey };

/// Query encoder (the Koopman embedding), its momentum-tracked key copy and
/// the bilinear similarity matrix W [d x d].
///
/// The key encoder's tensors never require grad, so anything encoded with it
/// is off the tape by construction.
struct EncoderParams {
  Mlp query;
  Mlp key;
  Tensor similarity_w;

  Index input_dim() const { return query.input_dim(); }
  Index latent_dim() const { return query.output_dim(); }
};

/// n -> hidden -> hidden -> d, tanh between layers. Key starts as an exact copy;
/// W starts at identity.
EncoderParams make_encoder(Index input_dim, Index latent_dim, Rng& rng, Index hidden = 64);

/// Rows of x are observations; result rows are latents.
Tensor encode(const EncoderParams& params, const Tensor& x, EncoderRole which);

/// x + dx with dx_ij ~ U(-eta |x_ij|, eta |x_ij|).
Matrix augment(const Matrix& x, double eta, Rng& rng);
Matrix augment(const Matrix& x, double eta, std::uint64_t seed);

/// InfoNCE with bilinear logits z_q W z_plus^T and in-batch negatives.
/// Mean over rows of logsumexp(logits_i) - logits_ii; requires batch >= 2.
Tensor contrastive_loss(const Tensor& z_query, const Tensor& z_plus, const Tensor& w);

/// key <- tau * key + (1 - tau) * query, off the tape.
void momentum_update(EncoderParams& params, double tau);

}  // namespace koopctl
