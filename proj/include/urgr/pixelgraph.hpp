#pragma once

#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "urgr/image.hpp"
#include "urgr/nn/autograd.hpp"
#include "urgr/nn/random.hpp"

namespace urgr::graph {

/// 8-neighbourhood lattice adjacency of an image grid. Node r = y * width + x.
/// Stored both as an undirected edge list (i < j, ascending) and as CSR rows
/// with ascending column indices.
struct Adjacency {
  int height = 0;
  int width = 0;
  int nodes = 0;
  std::vector<std::pair<int, int>> edges;
  std::vector<int> row_ptr;
  std::vector<int> col;

  std::vector<int> degrees() const;
  // Dense 0/1 matrix, row-major. Refuses graphs above 4096 nodes.
  std::vector<double> dense() const;
  // One "i j" line per undirected edge.
  void write_edge_list(std::ostream& os) const;

  bool operator==(const Adjacency&) const = default;
};

/// E[i][j] = 1 iff pixels i and j are at Chebyshev distance exactly 1.
/// `add_self_loops` additionally sets the diagonal.
Adjacency build_adjacency(int height, int width, bool add_self_loops = false);

/// D^(-1/2) E D^(-1/2) in CSR form sharing E's sparsity pattern.
struct NormalizedPropagation {
  int nodes = 0;
  std::vector<double> degree;
  std::vector<int> row_ptr;
  std::vector<int> col;
  std::vector<double> value;

  double at(int i, int j) const;
  std::vector<double> dense() const;
};

NormalizedPropagation degree_and_normalize(const Adjacency& adjacency);

/// Â H for H [n, f] or a batch [N, n, f].
nn::Var propagate(const NormalizedPropagation& prop, const nn::Var& features);

enum class Activation { Identity, Glu };

struct GCLayerParams {
  nn::Var weight;  // [f_in, f_out]
  double dropout_rate = 0.4;
};

/// sigma(Â H W).
nn::Var gc_layer(const nn::Var& features, const NormalizedPropagation& prop, const GCLayerParams& params,
                 Activation activation);

/// Gated linear unit over the last axis: first half values, second half gates.
nn::Var glu(const nn::Var& x);

struct PixelGraph {
  int height = 0;
  int width = 0;
  nn::Tensor features;  // [n, channels]
  Adjacency adjacency;
};

PixelGraph image_to_graph(const Image& img);

/// Sequential GC layers with GLU. Dropout runs between layers (never after
/// the last) and only in training mode, drawing from `rng`.
nn::Var gcn_stack(const nn::Var& features, const NormalizedPropagation& prop, std::span<const GCLayerParams> layers,
                  double dropout_between, bool training, nn::Rng* rng);

nn::Var gcn_stack(const PixelGraph& graph, std::span<const GCLayerParams> layers, double dropout_between,
                  bool training, nn::Rng* rng);

}  // namespace urgr::graph
