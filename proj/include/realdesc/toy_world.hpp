#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "realdesc/backbone.hpp"
#include "realdesc/descriptions.hpp"
#include "realdesc/training.hpp"
#include "realdesc/zeroshot.hpp"

// Synthetic "creatures" for desk-scale experiments: each class is a head,
// body and tail colour drawn from a small palette, rendered as three
// horizontal bands with jitter and noise, and named with an invented word.
namespace realdesc::toy {

inline constexpr const char* kPlaceholder = "creature";

struct Creature {
  std::string name;
  int head = 0;
  int body = 0;
  int tail = 0;
};

const std::vector<std::string>& palette();
const std::vector<std::array<std::uint8_t, 3>>& palette_rgb();

/// n creatures with distinct colour triples and distinct names.
std::vector<Creature> make_creatures(std::size_t n, std::uint64_t seed);

/// Disjoint training and evaluation creatures drawn from one pool.
struct World {
  std::vector<Creature> all;
  std::vector<Creature> train;
  std::vector<Creature> eval;
};
World make_world(std::size_t n_train, std::size_t n_eval, std::uint64_t seed);

/// RGB8 image, side x side x 3.
std::vector<std::uint8_t> render(const Creature& c, int side, std::uint64_t seed);
ImageTensor render_tensor(const Creature& c, int side, std::uint64_t seed, const Preprocessing& prep);

/// Sentences naming the creature and its part colours.
std::vector<std::string> describe(const Creature& c);
/// Named and name-free descriptions for every creature.
DescriptionFile description_file(const std::vector<Creature>& creatures);

/// "toy:<creature index>:<image seed>"
std::string image_ref(std::size_t creature, std::uint64_t image_seed);
ImageResolver resolver(std::vector<Creature> creatures, int render_side = 96);

class Catalog final : public ImageCatalog {
 public:
  Catalog(std::vector<Creature> creatures, std::size_t images_per_class, std::uint64_t seed);
  std::vector<std::string> classes() const override;
  std::vector<std::string> images(const std::string& class_name) const override;

 private:
  std::vector<Creature> creatures_;
  std::size_t per_class_;
  std::uint64_t seed_;
};

class Source final : public LabeledImageSource {
 public:
  Source(std::vector<Creature> creatures, std::size_t images_per_class, std::uint64_t seed, int render_side = 96);
  std::size_t size() const override { return creatures_.size() * per_class_; }
  std::string label(std::size_t i) const override { return creatures_[i / per_class_].name; }
  std::string key(std::size_t i) const override;
  ImageTensor load(std::size_t i, const Preprocessing& prep) const override;

 private:
  std::vector<Creature> creatures_;
  std::size_t per_class_;
  std::uint64_t seed_;
  int side_;
};

}  // namespace realdesc::toy
