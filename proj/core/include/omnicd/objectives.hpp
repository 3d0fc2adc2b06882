#pragma once

#include <array>

#include "omnicd/types.hpp"

namespace omnicd {

/// The four loss components plus their weighted combination.
struct LossReport {
    Var l_cd, l_sep, l_content, l_rec;
    Var total;
    double cd() const { return l_cd->v.data[0]; }
    double sep() const { return l_sep->v.data[0]; }
    double content() const { return l_content->v.data[0]; }
    double rec() const { return l_rec->v.data[0]; }
    double total_value() const { return total->v.data[0]; }
};

/// BCE (mean over pixels, probabilities clamped to [1e-7, 1-1e-7]) plus Dice
/// loss with smoothing 1, equally weighted.
Var change_detection_loss(const Var& prob, const Tensor& target);

/// Squared cosine similarity between the pooled content vector and the style
/// vector. Zero-norm inputs give 0.
Var separation_loss(const ContentFeature& content, const StyleVector& style);

/// Moment matching over unchanged feature cells: mean squared difference of
/// per-channel means plus of per-channel standard deviations.
/// unchanged: [S/8,S/8] grid, 1 marks cells whose covered pixels are all unchanged.
Var content_similarity_loss(const ContentFeature& c1, const ContentFeature& c2,
                            const Tensor& unchanged);

/// Map a full-resolution binary change mask onto the feature grid: a coarse
/// cell counts as unchanged only if every covered pixel is unchanged.
Tensor unchanged_cell_grid(const Tensor& change_mask, int grid);

/// Mean absolute error averaged over both temporal pairs.
Var reconstruction_loss(const Var& recon1, const Tensor& img1, const Var& recon2,
                        const Tensor& img2);

/// total = l_cd + l1*l_sep + l2*l_content + l3*l_rec. Throws NumericError on
/// non-finite components, naming the offender.
LossReport total_loss(const Var& l_cd, const Var& l_sep, const Var& l_content, const Var& l_rec,
                      const std::array<double, 3>& lambdas);

}  // namespace omnicd
