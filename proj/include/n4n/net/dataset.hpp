#pragma once

#include <memory>
#include <string>
#include <vector>

#include "n4n/core/error.hpp"
#include "n4n/nn/tensor.hpp"
#include "n4n/volume/nifti.hpp"
#include "n4n/volume/volume.hpp"

namespace n4n::net {

/// One training example: image (C, D, H, W) and binary label (1, D, H, W).
struct Sample {
  nn::NdTensor<float> image;
  nn::NdTensor<float> label;
};

/// (C, nz, ny, nx) view of a volume; the memory order is identical.
inline nn::NdTensor<float> to_tensor(const Volume& v) {
  auto vals = v.values();
  return nn::NdTensor<float>(nn::Shape{v.channels(), v.nz(), v.ny(), v.nx()},
                             std::vector<float>(vals.begin(), vals.end()));
}

inline Sample make_sample(const Volume& image, const Mask& label) {
  require(label.volume().nx() == image.nx() && label.volume().ny() == image.ny() &&
              label.volume().nz() == image.nz(),
          ErrorCode::ShapeMismatch, "label grid does not match image grid");
  return {to_tensor(image), to_tensor(label.volume())};
}

/// Random-access source of samples, loaded on demand.
class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual std::size_t size() const = 0;
  virtual Sample load(std::size_t i) const = 0;
};

class MemoryDataset : public Dataset {
 public:
  MemoryDataset() = default;
  explicit MemoryDataset(std::vector<Sample> s) : samples_(std::move(s)) {}
  void add(Sample s) { samples_.push_back(std::move(s)); }
  std::size_t size() const override { return samples_.size(); }
  Sample load(std::size_t i) const override { return samples_.at(i); }

 private:
  std::vector<Sample> samples_;
};

class SubsetDataset : public Dataset {
 public:
  SubsetDataset(const Dataset& base, std::vector<std::size_t> idx) : base_(base), idx_(std::move(idx)) {}
  std::size_t size() const override { return idx_.size(); }
  Sample load(std::size_t i) const override { return base_.load(idx_.at(i)); }

 private:
  const Dataset& base_;
  std::vector<std::size_t> idx_;
};

class ConcatDataset : public Dataset {
 public:
  ConcatDataset(const Dataset& a, const Dataset& b) : a_(a), b_(b) {}
  std::size_t size() const override { return a_.size() + b_.size(); }
  Sample load(std::size_t i) const override { return i < a_.size() ? a_.load(i) : b_.load(i - a_.size()); }

 private:
  const Dataset& a_;
  const Dataset& b_;
};

struct ManifestEntry {
  std::string image;
  std::string label;
};

/// Tensor/label NIfTI pairs cropped to a shared ROI at load time.
class NiftiDataset : public Dataset {
 public:
  NiftiDataset(std::vector<ManifestEntry> entries, BoundingBox roi) : entries_(std::move(entries)), roi_(roi) {}
  std::size_t size() const override { return entries_.size(); }
  Sample load(std::size_t i) const override {
    const auto& e = entries_.at(i);
    const Volume img = nifti::load(e.image);
    const Volume lab = nifti::load(e.label);
    require(roi_.within(img), ErrorCode::ShapeMismatch,
            e.image + ": ROI does not fit inside the volume");
    return make_sample(crop(img, roi_), Mask::threshold(crop(lab, roi_), 0.5f));
  }
  const BoundingBox& roi() const { return roi_; }

 private:
  std::vector<ManifestEntry> entries_;
  BoundingBox roi_;
};

}  // namespace n4n::net
