#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "osq/graphgen.hpp"
#include "osq/matrix.hpp"

namespace osq::metrics {

using DenseMatrix = Matrix<double>;

// Unnormalized L = D - A, or L_sym = I - D^{-1/2} A D^{-1/2}.
// Normalized with an isolated node throws ParameterError.
DenseMatrix laplacian(const graph::TaskGraph& g, bool normalized);

struct EigenDecomposition {
  std::vector<double> values;  // ascending
  DenseMatrix vectors;         // column j pairs with values[j]
};

// Cyclic Jacobi rotations; stops once the off-diagonal Frobenius mass falls
// below 1e-12 * max(1, ||A||_F).
EigenDecomposition symmetric_eigen(const DenseMatrix& a);

inline constexpr double kZeroEigenTolerance = 1e-9;

struct SpectralGap {
  double value = 0;           // smallest nonzero eigenvalue of L_sym; 0 if disconnected
  int zero_multiplicity = 0;  // eigenvalues below kZeroEigenTolerance
  bool disconnected() const { return zero_multiplicity > 1; }
};

SpectralGap spectral_gap(const graph::TaskGraph& g);

// Moore-Penrose pseudoinverse of a symmetric matrix, dropping eigenvalues
// below 1e-10 * lambda_max.
DenseMatrix pseudoinverse(const DenseMatrix& symmetric);

// R_uv = (1_u - 1_v)^T L^+ (1_u - 1_v) with the unnormalized Laplacian.
// Throws NumericalError when u and v lie in different components.
double effective_resistance(const graph::TaskGraph& g, int u, int v);

// Reuses one pseudoinverse for several pairs.
class ResistanceOracle {
 public:
  explicit ResistanceOracle(const graph::TaskGraph& g);
  double operator()(int u, int v) const;

 private:
  DenseMatrix pinv_;
  std::vector<int> component_;
};

// (sum_p 1/len(p))^{-1} for vertex-disjoint u-v paths.
double effective_resistance_disjoint_paths(std::span<const int> path_lengths);

inline constexpr int kCheegerMaxNodes = 24;

struct CheegerResult {
  double value = 0;
  std::vector<int> subset;  // one minimizer A with |A| <= |V|/2
};

// Past kCheegerMaxNodes, graphs whose twin classes span at most this many
// per-class count vectors are still solved exactly.
inline constexpr long kCheegerMaxCountVectors = 1L << 24;

// min |dA|/|A| over 0 < |A| <= |V|/2 by exhaustive enumeration.
CheegerResult cheeger_exact(const graph::TaskGraph& g);
bool cheeger_feasible(const graph::TaskGraph& g);
// Enumerates how many members of each twin class A contains; the cut depends
// on nothing else. Empty when the count space exceeds kCheegerMaxCountVectors.
std::optional<CheegerResult> cheeger_by_classes(const graph::TaskGraph& g);

// k/8, valid for G_{n,k} with k <= 2n.
double cheeger_lower_bound_gnk(int n, int k);

// Balanced Forman curvature of edge (i, j); 0 whenever min degree is 1.
double balanced_forman_curvature(const graph::TaskGraph& g, graph::Edge edge);
std::vector<double> edge_curvatures(const graph::TaskGraph& g);

// Mean pairwise distance among target rows over mean target row norm.
template <typename T>
double mad_energy(const Matrix<T>& features, std::span<const int> target_rows);

struct ResistancePair {
  int u = 0;
  int v = 0;
  double value = 0;
};

struct DiagnosticsReport {
  graph::Family family = graph::Family::TwoRadius;
  graph::TaskParams params;
  int nodes = 0;
  int edges = 0;
  int components = 0;
  SpectralGap spectral;
  std::optional<CheegerResult> cheeger;
  std::optional<double> cheeger_lower_bound;
  std::vector<std::pair<graph::Edge, double>> edge_curvature;
  std::vector<ResistancePair> resistances;  // each target with its matching source
  std::optional<double> mad;                // over target input features

  bool connected() const { return components == 1; }
};

DiagnosticsReport diagnose(const graph::TaskInstance& instance);

// Flat "key = value" text, one entry per line.
std::string format_report(const DiagnosticsReport& report);
// "u,v,curvature" rows with a header line.
std::string format_curvature_csv(const DiagnosticsReport& report);

int count_components(const graph::TaskGraph& g);

}  // namespace osq::metrics
