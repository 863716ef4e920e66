#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "advloop/core/error.hpp"
#include "advloop/core/image.hpp"
#include "advloop/core/rng.hpp"
#include "advloop/render/render.hpp"
#include "advloop/scene/scene.hpp"

namespace advloop {

struct Sample {
  std::uint32_t index = 0;  // position in the generation order
  ImageTensor image;
  LabelSet labels;

  friend bool operator==(const Sample&, const Sample&) = default;
};

using Dataset = std::vector<Sample>;

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

/// Number of training frames for a split; rounds to nearest.
inline std::size_t train_count(std::size_t n, double train_fraction) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_fraction));
}

/// Frame i uses scene seed derive_seed(seed, 2i) and noise seed derive_seed(seed, 2i+1),
/// so frames are independent of generation order.
inline Sample generate_sample(std::uint32_t i, std::uint64_t seed, const TrackSpec& track,
                              const RenderParams& render, const SceneSamplingParams& sampling) {
  const Scene scene = sample_scene(derive_seed(seed, 2ULL * i), track, sampling);
  auto frame = render_frame(scene, track, render, derive_seed(seed, 2ULL * i + 1));
  return {i, std::move(frame.image), std::move(frame.labels)};
}

inline DatasetSplit gen_dataset(std::size_t n, double train_fraction, std::uint64_t seed, const TrackSpec& track,
                                const RenderParams& render = {}, const SceneSamplingParams& sampling = {}) {
  require(n >= 10, "gen_dataset: need at least 10 frames");
  require(train_fraction > 0.0 && train_fraction < 1.0, "gen_dataset: train_fraction must be in (0, 1)");
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  Rng split_rng(derive_seed(seed, 0xda7a5e7ULL));
  split_rng.shuffle(order);
  const std::size_t n_train = train_count(n, train_fraction);
  DatasetSplit out;
  out.train.reserve(n_train);
  out.test.reserve(n - n_train);
  for (std::size_t k = 0; k < n; ++k) {
    auto s = generate_sample(order[k], seed, track, render, sampling);
    (k < n_train ? out.train : out.test).push_back(std::move(s));
  }
  // Same order as load_split, so in-memory and on-disk datasets train identically.
  auto by_index = [](const Sample& a, const Sample& b) { return a.index < b.index; };
  std::sort(out.train.begin(), out.train.end(), by_index);
  std::sort(out.test.begin(), out.test.end(), by_index);
  return out;
}

// On disk: <dir>/{train,test}/NNNNNN.adim + NNNNNN.txt
inline std::string sample_stem(std::uint32_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06u", index);
  return buf;
}

inline void save_split(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& s : d) {
    const auto stem = sample_stem(s.index);
    write_file(dir / (stem + ".adim"), encode_image(s.image));
    const auto text = format_labels(s.labels);
    write_file(dir / (stem + ".txt"),
               std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
}

inline void save_dataset(const DatasetSplit& split, const std::filesystem::path& dir) {
  save_split(split.train, dir / "train");
  save_split(split.test, dir / "test");
}

/// Loads every NNNNNN.adim/.txt pair in `dir`, sorted by file name.
inline Dataset load_split(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) fail(ErrorKind::missing_input, "dataset directory not found: " + dir.string());
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".adim") images.push_back(e.path());
  std::sort(images.begin(), images.end());
  Dataset d;
  for (const auto& p : images) {
    Sample s;
    s.index = static_cast<std::uint32_t>(std::stoul(p.stem().string()));
    s.image = decode_image(read_file(p));
    auto label_path = p;
    label_path.replace_extension(".txt");
    const auto raw = read_file(label_path);
    s.labels = parse_labels(std::string(raw.begin(), raw.end()));
    d.push_back(std::move(s));
  }
  if (d.empty()) fail(ErrorKind::missing_input, "no frames found in " + dir.string());
  return d;
}

inline DatasetSplit load_dataset(const std::filesystem::path& dir) {
  return {load_split(dir / "train"), load_split(dir / "test")};
}

}  // namespace advloop
