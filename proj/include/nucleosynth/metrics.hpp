// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <set>
#include <vector>

#include "nucleosynth/field.hpp"

namespace nucleo {

/// Moments of a fitted Gaussian (double precision; covariance is kept
/// symmetric and ridge-regularized to stay PSD).
struct GaussianSummary {
    std::vector<double> mean;
    std::vector<double> cov;  // row-major d x d
    int64_t count = 0;

    int dim() const { return static_cast<int>(mean.size()); }
};

/// Unbiased moments plus `ridge` added to the diagonal.
GaussianSummary fit_gaussian(const std::vector<std::vector<double>>& rows, double ridge = 1e-6);

/// d^2 = |mu1-mu2|^2 + Tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2}); the
/// square root goes through a symmetric eigendecomposition with negative
/// eigenvalue dust clamped at zero.
double frechet_distance(const GaussianSummary& a, const GaussianSummary& b);

/// Per-label descriptor: K-1 class pixel fractions plus connected-component
/// count / 100.
std::vector<double> fsd_descriptor(const LabelGrid& label, int k);

/// Frechet distance between descriptor Gaussians of two label sets.
double fsd(const std::vector<LabelGrid>& labels_a, const std::vector<LabelGrid>& labels_b, int k);

/// Features from a fixed, seeded random 3-layer conv stack pooled to 64-d.
std::vector<double> toy_fid_features(const Field& image);
double toy_fid(const std::vector<Field>& images_a, const std::vector<Field>& images_b);

/// 2|A.B| / (|A|+|B|); 1 when both masks are empty.
double dice(const std::vector<char>& a, const std::vector<char>& b);
double foreground_dice(const LabelGrid& a, const LabelGrid& b);

/// Aggregated Jaccard Index; empty-vs-empty is 1, one-sided empty is 0.
double aji(const InstanceGrid& gt, const InstanceGrid& pred);

/// Fraction of labels whose out-of-prompt class mass is <= eps_v of their
/// nucleus pixels.
double class_consistency(const std::vector<LabelGrid>& labels, const std::set<int>& class_set,
                         double eps_v = 0.02);

/// Fraction of labels whose measured proportion falls in the prompted bucket.
double proportion_accuracy(const std::vector<LabelGrid>& labels,
                           const std::vector<int>& prompted_buckets);

}  // namespace nucleo
