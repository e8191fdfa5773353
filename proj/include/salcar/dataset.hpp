#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "salcar/config.hpp"
#include "salcar/image.hpp"
#include "salcar/priors.hpp"
#include "salcar/tensor.hpp"

namespace salcar {

struct ManifestEntry {
  std::string image_id;
  std::filesystem::path reference_path;
  std::filesystem::path distorted_path;
  std::optional<std::filesystem::path> saliency_path;
  std::optional<std::filesystem::path> jnd_path;
  double raw_score = 0.0;
  std::string distortion_type;
  // reference_path exactly as written in the manifest; identifies the reference.
  std::string reference_key;

  const std::string& reference_id() const { return reference_key; }
};

// CSV with a header row naming the columns image_id, reference_path,
// distorted_path, raw_score and optionally saliency_path, jnd_path,
// distortion_type. Relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
std::vector<ManifestEntry> parse_manifest(const std::string& text, const std::filesystem::path& base_dir = {});

// Linear min-max map to [0,9]; DMOS is flipped so higher always means better.
std::vector<double> normalize_scores(std::span<const double> raw, ScorePolarity polarity);

enum class Split { train, val, test };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
  std::size_t total() const { return train + val + test; }
};
// "15/5/5"
SplitCounts parse_split_counts(const std::string& text);

using SplitPlan = std::map<std::string, Split>;

// Shuffles the distinct reference ids with `seed` and cuts them by count.
SplitPlan split_by_reference(std::span<const std::string> reference_ids, const SplitCounts& counts,
                             std::uint64_t seed);
void save_split_plan(const std::filesystem::path& path, const SplitPlan& plan);
SplitPlan load_split_plan(const std::filesystem::path& path);

// C x H x W tensor with x / 255 - 0.5 per channel; channels is 3 (RGB) or 1 (luma).
Tensor rescale_image(const ColorImage& img, std::size_t channels = 3);

/// Everything needed to cut quads from one distorted image.
struct QuadSource {
  Tensor reference;  // C x H x W in [-0.5, 0.5]
  Tensor distorted;
  PriorMap saliency;
  PriorMap jnd;

  std::size_t height() const { return reference.dim(1); }
  std::size_t width() const { return reference.dim(2); }
  void validate() const;
};

struct PatchQuad {
  Tensor ref_patch;  // C x P x P
  Tensor dst_patch;
  Tensor sal_patch;  // 1 x P x P in [0,1]
  Tensor jnd_patch;
  std::size_t row = 0;
  std::size_t col = 0;
};

PatchQuad cut_quad(const QuadSource& src, std::size_t row, std::size_t col, std::size_t patch = 32);
std::vector<PatchQuad> sample_training_quads(const QuadSource& src, std::size_t n, std::uint64_t seed,
                                             std::size_t patch = 32);
// Row-major non-overlapping grid; remainder pixels are dropped.
std::vector<PatchQuad> tile_validation_quads(const QuadSource& src, std::size_t patch = 32);

// SplitMix64 finalizer over (seed, a, b): independent streams per epoch/image.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// A manifest entry with decoded images and prior maps.
struct ImageRecord {
  ManifestEntry entry;
  double score = 0.0;  // normalized, [0,9]
  QuadSource source;
};

// Priors missing from the manifest are computed from luma: saliency from the
// reference, JND from the reference/distorted pair.
QuadSource load_quad_source(const ManifestEntry& entry, const TrainConfig& cfg, std::size_t channels = 3);
QuadSource make_quad_source(const ColorImage& ref, const ColorImage& dst, const TrainConfig& cfg,
                            std::size_t channels = 3, const PriorMap* saliency = nullptr,
                            const PriorMap* jnd = nullptr);

// Loads every entry (optionally on several threads) and attaches normalized scores.
std::vector<ImageRecord> load_records(const std::vector<ManifestEntry>& entries, const TrainConfig& cfg,
                                      std::size_t channels = 3, std::size_t threads = 1);

}  // namespace salcar
