#pragma once

#include <memory>
#include <string>
#include <vector>

#include "gos/mask.hpp"
#include "gos/scene.hpp"

namespace gos {

struct SegmenterResult {
  BinaryMask mask;    // image-sized
  double confidence;  // in [0,1]
};

// Prompt-driven segmenter behind a fixed interface: a real VFM backend can be
// dropped in without pipeline changes. The pipeline requires both prompt kinds.
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual bool accepts_box_prompt() const = 0;
  virtual bool accepts_mask_prompt() const = 0;
  virtual SegmenterResult segment_with_box(const Image& image,
                                           const Box& box_prompt) const = 0;
  virtual SegmenterResult refine_with_mask(const Image& image,
                                           const BinaryMask& mask_prompt) const = 0;
};

// Deterministic mock: connected component of the dominant quantized color
// (16 levels per channel) inside the prompt region.
class MockSegmenter : public Segmenter {
 public:
  bool accepts_box_prompt() const override { return true; }
  bool accepts_mask_prompt() const override { return true; }
  SegmenterResult segment_with_box(const Image& image,
                                   const Box& box_prompt) const override;
  SegmenterResult refine_with_mask(const Image& image,
                                   const BinaryMask& mask_prompt) const override;
};

struct SupervisionMask {
  BinaryMask mask;
  double confidence;
};

// Two-pass pipeline: box prompt, then the resulting mask as a dense prompt.
// Order of the input boxes is preserved.
std::vector<SupervisionMask> generate_supervision(const Segmenter& backend,
                                                  const Image& image,
                                                  const std::vector<Box>& boxes);

std::unique_ptr<Segmenter> make_segmenter(const std::string& backend_name);

}  // namespace gos
