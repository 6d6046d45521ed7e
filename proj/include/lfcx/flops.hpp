#pragma once

// Analytic multiply-accumulate counts. Only convolutions and matrix products
// are counted; norms, activations, softmax and element-wise adds cost 0.
// Formulas are listed in docs/flops.md.

#include <cstddef>
#include <string>
#include <vector>

#include "lfcx/model.hpp"

namespace lfcx::flops {

struct Entry {
  std::string name;
  std::size_t macs = 0;
};

struct Report {
  std::vector<Entry> entries;
  std::size_t total() const;
  // Sum of entries under a dotted prefix.
  std::size_t under(const std::string& prefix) const;
};

// Conv on an out_h x out_w output grid.
std::size_t conv(std::size_t in_c, std::size_t out_c, std::size_t k, std::size_t groups,
                 std::size_t out_h, std::size_t out_w);
std::size_t matmul(std::size_t m, std::size_t k, std::size_t n);

// Component counts for one batch item. h, w are feature-grid extents.
Report backbone(const BackboneConfig& cfg, std::size_t img_h, std::size_t img_w,
                const std::string& prefix = "backbone");
Report tsaim(std::size_t channels, std::size_t zh, std::size_t zw, std::size_t xh, std::size_t xw,
             const std::string& prefix = "tsaim");
Report ecam(const EcamConfig& cfg, std::size_t h, std::size_t w);
Report stam(std::size_t channels, std::size_t h, std::size_t w, const std::string& prefix = "stam");
Report head(const HeadConfig& cfg, std::size_t h, std::size_t w, bool fused,
            const std::string& prefix = "head");

// One forward pass from the four crops (template and search per modality).
Report model(const ModelConfig& cfg, std::size_t template_px, std::size_t search_px,
             bool fused_head);

}  // namespace lfcx::flops
