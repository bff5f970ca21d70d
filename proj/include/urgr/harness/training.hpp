#pragma once

#include <cstdint>
#include <vector>

#include "urgr/focus.hpp"
#include "urgr/gvit.hpp"
#include "urgr/harness/dataset.hpp"
#include "urgr/hqnet.hpp"

namespace urgr::harness {

/// Focus target used when none is configured: the HQ-Net input size when an
/// enhancer is present, else the classifier's graph grid.
focus::FocusConfig default_focus(const gvit::GViTConfig& cfg, const hqnet::HQNet* enhancer);

/// Focuses every row on its recorded box and enhances it when an HQ-Net is
/// given. Rows must carry a bbox.
std::vector<gvit::LabeledImage> prepare_classifier_data(const DatasetManifest& m, const focus::FocusConfig& focus_cfg,
                                                        const hqnet::HQNet* enhancer);

gvit::TrainResult train_gvit(const DatasetManifest& m, const hqnet::HQNet* enhancer,
                             const focus::FocusConfig& focus_cfg, const gvit::GViTConfig& cfg,
                             const gvit::TrainConfig& hyper, std::uint64_t seed);

}  // namespace urgr::harness
