#include "urgr/harness/training.hpp"

#include "urgr/error.hpp"

namespace urgr::harness {

focus::FocusConfig default_focus(const gvit::GViTConfig& cfg, const hqnet::HQNet* enhancer) {
  focus::FocusConfig f;
  f.target_size = enhancer ? enhancer->config.input_size : cfg.graph_grid;
  return f;
}

std::vector<gvit::LabeledImage> prepare_classifier_data(const DatasetManifest& m, const focus::FocusConfig& focus_cfg,
                                                        const hqnet::HQNet* enhancer) {
  std::vector<gvit::LabeledImage> out;
  out.reserve(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Sample& s = m.samples[i];
    if (!s.bbox) throw InvalidArgument("classifier data: row " + std::to_string(i) + " has no bbox");
    out.push_back({gvit::prepare(m.load_image(i), *s.bbox, focus_cfg, enhancer), s.label});
  }
  return out;
}

gvit::TrainResult train_gvit(const DatasetManifest& m, const hqnet::HQNet* enhancer,
                             const focus::FocusConfig& focus_cfg, const gvit::GViTConfig& cfg,
                             const gvit::TrainConfig& hyper, std::uint64_t seed) {
  if (m.size() == 0) throw InvalidArgument("train_gvit: empty dataset");
  const auto data = prepare_classifier_data(m, focus_cfg, enhancer);
  return gvit::train(data, cfg, hyper, seed);
}

}  // namespace urgr::harness
