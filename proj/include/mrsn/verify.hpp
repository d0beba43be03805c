#pragma once

// Independent oracles and check suites. Shared by the unit tests, the
// acceptance binary and `mrsn selftest`; not used by the production path.

#include <functional>
#include <string>
#include <vector>

#include "mrsn/evaluation.hpp"
#include "mrsn/model.hpp"

namespace mrsn::verify {

struct CheckResult {
  std::string name;
  double error = 0;
  double tolerance = 0;

  bool passed() const { return error <= tolerance; }
};

struct SuiteReport {
  std::string suite;
  std::vector<CheckResult> checks;
  double seconds = 0;

  bool passed() const;
  double worst() const;
};

// ---- gradients ------------------------------------------------------------

/// Max over inputs of ||analytic - numeric|| / max(||analytic||, ||numeric||),
/// numeric from central differences with step `eps` on every element.
/// `f` must rebuild its graph on every call and return a single element.
double gradient_error(const std::function<Var<double>()>& f, const std::vector<Var<double>>& inputs,
                      double eps = 1e-3);

inline constexpr double kGradientTolerance = 1e-4;

/// Small full model (d=8, h=2, S=4, p=2 so L=4) used by the end-to-end
/// checks.
ModelConfig toy_model_config();

/// Every differentiable operation at d=8, h=2, L=4, N=2.
SuiteReport gradient_suite(std::uint64_t seed);

// ---- attention -------------------------------------------------------------

/// Per-head loop attention in double: softmax(q k^T / sqrt(dk)) v per head,
/// heads concatenated, then W^O. Weights are read as d x d row-major.
BasicArray<double> naive_attention(const BasicArray<double>& x, const BasicArray<double>& y,
                                   const BasicArray<double>& wq, const BasicArray<double>& wk,
                                   const BasicArray<double>& wv, const BasicArray<double>& wo,
                                   std::size_t heads);

inline constexpr double kAttentionTolerance = 1e-5;

/// MSA and MCA against the loop oracle on `fixtures` random fixtures.
SuiteReport attention_oracle_suite(std::uint64_t seed, std::size_t fixtures = 20);

// ---- permutations ----------------------------------------------------------

inline constexpr double kEquivarianceTolerance = 1e-5;

/// AARE and full-MRSE actor-permutation equivariance, RCM_L support-order
/// invariance.
SuiteReport equivariance_suite(std::uint64_t seed);

// ---- bank ------------------------------------------------------------------

/// 60 s video: build, serialize, reload, compare every window bit for bit,
/// check the entry count and the boundary windows at t=1 and t=59.
SuiteReport bank_suite(std::uint64_t seed);

// ---- frame mAP -------------------------------------------------------------

struct MapFixture {
  std::string name;
  std::vector<Detection> detections;
  std::vector<GroundTruthBox> ground_truth;
  std::size_t num_classes = 1;
};

/// Hand-built fixtures (at most 10 boxes each, no tied confidences).
std::vector<MapFixture> map_fixtures();

/// For every distinct confidence threshold, re-matches the detections above
/// it from scratch, records (recall, precision), and integrates the
/// right-maximum precision over recall.
double brute_force_map(const std::vector<Detection>& detections,
                       const std::vector<GroundTruthBox>& ground_truth, std::size_t num_classes,
                       double iou_threshold = kFrameIouThreshold);

inline constexpr double kMapTolerance = 1e-9;

SuiteReport map_oracle_suite();

// ---- pinned-value fixtures -------------------------------------------------

/// layer_norm evaluated with `eps` against closed-form values computed with
/// eps = 1e-5 on a low-variance row, where the choice of eps is visible.
CheckResult layer_norm_value_fixture(double eps);

using SoftmaxFn = std::function<BasicArray<double>(const BasicArray<double>&)>;

/// Rows with logits near 1000 against closed-form probabilities.
CheckResult softmax_stability_fixture(const SoftmaxFn& softmax);

/// Library softmax (max-shifted).
BasicArray<double> library_softmax(const BasicArray<double>& x);
/// Softmax without the max shift; overflows at large logits.
BasicArray<double> unshifted_softmax(const BasicArray<double>& x);

SuiteReport fixture_suite();

/// All suites in order: gradients, attention, equivariance, bank, mAP,
/// fixtures.
std::vector<SuiteReport> run_selftest(std::uint64_t seed);

}  // namespace mrsn::verify
