#include "urgr/pixelgraph.hpp"

#include <cmath>
#include <ostream>
#include <string>

#include "urgr/error.hpp"
#include "urgr/nn/ops.hpp"

namespace urgr::graph {

std::vector<int> Adjacency::degrees() const {
  std::vector<int> deg(nodes);
  for (int i = 0; i < nodes; ++i) deg[i] = row_ptr[i + 1] - row_ptr[i];
  return deg;
}

std::vector<double> Adjacency::dense() const {
  if (nodes > 4096) throw InvalidArgument("dense adjacency refused for " + std::to_string(nodes) + " nodes");
  std::vector<double> m(static_cast<std::size_t>(nodes) * nodes, 0.0);
  for (int i = 0; i < nodes; ++i) {
    for (int k = row_ptr[i]; k < row_ptr[i + 1]; ++k) m[static_cast<std::size_t>(i) * nodes + col[k]] = 1.0;
  }
  return m;
}

void Adjacency::write_edge_list(std::ostream& os) const {
  for (const auto& [i, j] : edges) os << i << ' ' << j << '\n';
}

Adjacency build_adjacency(int height, int width, bool add_self_loops) {
  if (height < 1 || width < 1) throw InvalidArgument("build_adjacency: grid dimensions must be >= 1");
  Adjacency adj;
  adj.height = height;
  adj.width = width;
  adj.nodes = height * width;
  adj.row_ptr.reserve(adj.nodes + 1);
  adj.row_ptr.push_back(0);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int i = y * width + x;
      // Row-major neighbour scan keeps columns ascending.
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= height || nx < 0 || nx >= width) continue;
          const int j = ny * width + nx;
          if (j == i && !add_self_loops) continue;
          adj.col.push_back(j);
          if (j > i) adj.edges.emplace_back(i, j);
        }
      }
      adj.row_ptr.push_back(static_cast<int>(adj.col.size()));
    }
  }
  return adj;
}

double NormalizedPropagation::at(int i, int j) const {
  for (int k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
    if (col[k] == j) return value[k];
  }
  return 0.0;
}

std::vector<double> NormalizedPropagation::dense() const {
  if (nodes > 4096) throw InvalidArgument("dense propagation refused for " + std::to_string(nodes) + " nodes");
  std::vector<double> m(static_cast<std::size_t>(nodes) * nodes, 0.0);
  for (int i = 0; i < nodes; ++i) {
    for (int k = row_ptr[i]; k < row_ptr[i + 1]; ++k) m[static_cast<std::size_t>(i) * nodes + col[k]] = value[k];
  }
  return m;
}

NormalizedPropagation degree_and_normalize(const Adjacency& adjacency) {
  NormalizedPropagation prop;
  prop.nodes = adjacency.nodes;
  prop.row_ptr = adjacency.row_ptr;
  prop.col = adjacency.col;
  prop.degree.resize(adjacency.nodes);
  const auto deg = adjacency.degrees();
  for (int i = 0; i < adjacency.nodes; ++i) {
    if (deg[i] == 0) throw InvalidArgument("degree_and_normalize: node " + std::to_string(i) + " is isolated");
    prop.degree[i] = deg[i];
  }
  prop.value.resize(prop.col.size());
  for (int i = 0; i < prop.nodes; ++i) {
    for (int k = prop.row_ptr[i]; k < prop.row_ptr[i + 1]; ++k) {
      prop.value[k] = 1.0 / std::sqrt(prop.degree[i] * prop.degree[prop.col[k]]);
    }
  }
  return prop;
}

nn::Var propagate(const NormalizedPropagation& prop, const nn::Var& features) {
  const nn::Shape& s = features.shape();
  if (s.size() != 2 && s.size() != 3) throw InvalidArgument("propagate: features must be [n,f] or [N,n,f]");
  const int batch = s.size() == 3 ? s[0] : 1;
  const int n = s[s.size() - 2];
  const int f = s.back();
  if (n != prop.nodes) {
    throw InvalidArgument("propagate: " + std::to_string(n) + " feature rows for " + std::to_string(prop.nodes) +
                          " nodes");
  }
  // Shares the sparsity arrays with the backward closure without copying per call.
  auto p = std::make_shared<const NormalizedPropagation>(prop);
  nn::Tensor out(s, 0.0);
  const nn::Tensor& in = features.value();
  for (int b = 0; b < batch; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * n * f;
    for (int i = 0; i < n; ++i) {
      double* dst = out.data() + base + static_cast<std::size_t>(i) * f;
      for (int k = p->row_ptr[i]; k < p->row_ptr[i + 1]; ++k) {
        const double v = p->value[k];
        const double* src = in.data() + base + static_cast<std::size_t>(p->col[k]) * f;
        for (int c = 0; c < f; ++c) dst[c] += v * src[c];
      }
    }
  }
  return nn::make_result(std::move(out), {features}, [p, batch, n, f](nn::Node& self) {
    nn::Node& parent = *self.parents[0];
    if (!parent.requires_grad) return;
    nn::Tensor& g = parent.ensure_grad();
    for (int b = 0; b < batch; ++b) {
      const std::size_t base = static_cast<std::size_t>(b) * n * f;
      for (int i = 0; i < n; ++i) {
        const double* dy = self.grad.data() + base + static_cast<std::size_t>(i) * f;
        for (int k = p->row_ptr[i]; k < p->row_ptr[i + 1]; ++k) {
          const double v = p->value[k];
          double* dst = g.data() + base + static_cast<std::size_t>(p->col[k]) * f;
          for (int c = 0; c < f; ++c) dst[c] += v * dy[c];
        }
      }
    }
  });
}

nn::Var gc_layer(const nn::Var& features, const NormalizedPropagation& prop, const GCLayerParams& params,
                 Activation activation) {
  if (!params.weight.defined() || params.weight.value().rank() != 2) {
    throw InvalidArgument("gc_layer: weight must be a matrix");
  }
  if (features.shape().back() != params.weight.shape()[0]) {
    throw InvalidArgument("gc_layer: feature width " + std::to_string(features.shape().back()) + " vs weight rows " +
                          std::to_string(params.weight.shape()[0]));
  }
  nn::Var z = nn::linear(propagate(prop, features), params.weight);
  return activation == Activation::Glu ? nn::glu(z) : z;
}

nn::Var glu(const nn::Var& x) { return nn::glu(x); }

PixelGraph image_to_graph(const Image& img) {
  PixelGraph g;
  g.height = img.height();
  g.width = img.width();
  // HWC storage is already node-major with channels as features.
  g.features = nn::Tensor(nn::Shape{img.height() * img.width(), img.channels()},
                          std::vector<double>(img.data().begin(), img.data().end()));
  g.adjacency = build_adjacency(img.height(), img.width());
  return g;
}

nn::Var gcn_stack(const nn::Var& features, const NormalizedPropagation& prop, std::span<const GCLayerParams> layers,
                  double dropout_between, bool training, nn::Rng* rng) {
  if (layers.empty()) throw InvalidArgument("gcn_stack: at least one layer required");
  if (training && dropout_between > 0.0 && rng == nullptr) {
    throw InvalidArgument("gcn_stack: training with dropout needs a random source");
  }
  nn::Var h = features;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (k > 0 && training && dropout_between > 0.0) h = nn::dropout(h, dropout_between, *rng);
    h = gc_layer(h, prop, layers[k], Activation::Glu);
  }
  return h;
}

nn::Var gcn_stack(const PixelGraph& graph, std::span<const GCLayerParams> layers, double dropout_between,
                  bool training, nn::Rng* rng) {
  const auto prop = degree_and_normalize(graph.adjacency);
  return gcn_stack(nn::Var(graph.features), prop, layers, dropout_between, training, rng);
}

}  // namespace urgr::graph
