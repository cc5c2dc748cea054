#include "realdesc/toy_world.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "realdesc/errors.hpp"
#include "realdesc/image_io.hpp"
#include "realdesc/name_filter.hpp"
#include "realdesc/util.hpp"

namespace realdesc::toy {

const std::vector<std::string>& palette() {
  static const std::vector<std::string> names = {"red", "green", "blue", "yellow", "purple", "orange"};
  return names;
}

const std::vector<std::array<std::uint8_t, 3>>& palette_rgb() {
  static const std::vector<std::array<std::uint8_t, 3>> rgb = {
      {220, 30, 30}, {30, 180, 40}, {30, 60, 220}, {235, 220, 30}, {140, 40, 170}, {245, 140, 20}};
  return rgb;
}

namespace {

std::string invent_name(Rng& rng) {
  static const std::vector<std::string> onsets = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
  static const std::vector<std::string> vowels = {"a", "e", "i", "o", "u"};
  auto word = [&](int syllables) {
    std::string w;
    for (int s = 0; s < syllables; ++s) {
      w += onsets[static_cast<std::size_t>(rng.below(onsets.size()))];
      w += vowels[static_cast<std::size_t>(rng.below(vowels.size()))];
    }
    w += onsets[static_cast<std::size_t>(rng.below(onsets.size()))];
    w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    return w;
  };
  return word(2) + " " + word(2);
}

}  // namespace

std::vector<Creature> make_creatures(std::size_t n, std::uint64_t seed) {
  const std::size_t colours = palette().size();
  if (n > colours * colours * colours) throw ValidationError("too many creatures for the palette");
  Rng rng(seed);
  std::vector<std::size_t> triples(colours * colours * colours);
  for (std::size_t i = 0; i < triples.size(); ++i) triples[i] = i;
  rng.shuffle(triples);
  std::vector<Creature> out;
  std::set<std::string> names, heads;
  for (std::size_t i = 0; i < n; ++i) {
    Creature c;
    const auto t = triples[i];
    c.head = static_cast<int>(t / (colours * colours));
    c.body = static_cast<int>((t / colours) % colours);
    c.tail = static_cast<int>(t % colours);
    do {
      c.name = invent_name(rng);
    } while (names.count(c.name) || heads.count(c.name.substr(c.name.find(' ') + 1)));
    names.insert(c.name);
    heads.insert(c.name.substr(c.name.find(' ') + 1));
    out.push_back(std::move(c));
  }
  return out;
}

World make_world(std::size_t n_train, std::size_t n_eval, std::uint64_t seed) {
  World w;
  w.all = make_creatures(n_train + n_eval, seed);
  w.train.assign(w.all.begin(), w.all.begin() + static_cast<std::ptrdiff_t>(n_train));
  w.eval.assign(w.all.begin() + static_cast<std::ptrdiff_t>(n_train), w.all.end());
  return w;
}

std::vector<std::uint8_t> render(const Creature& c, int side, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint8_t> img(static_cast<std::size_t>(side) * side * 3);
  const auto& rgb = palette_rgb();
  const int margin = side / 8;
  const int jitter = std::max(1, side / 16);
  const int x0 = margin + static_cast<int>(rng.below(static_cast<std::uint64_t>(jitter)));
  const int x1 = side - margin - static_cast<int>(rng.below(static_cast<std::uint64_t>(jitter)));
  const int top = margin + static_cast<int>(rng.below(static_cast<std::uint64_t>(jitter)));
  const int bottom = side - margin - static_cast<int>(rng.below(static_cast<std::uint64_t>(jitter)));
  const int h = bottom - top;
  const int b1 = top + h / 3 + static_cast<int>(rng.below(static_cast<std::uint64_t>(jitter))) - jitter / 2;
  const int b2 = top + 2 * h / 3 + static_cast<int>(rng.below(static_cast<std::uint64_t>(jitter))) - jitter / 2;
  const int bg = 90 + static_cast<int>(rng.below(80));
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      std::array<int, 3> px = {bg, bg, bg};
      if (x >= x0 && x < x1 && y >= top && y < bottom) {
        const int part = y < b1 ? c.head : (y < b2 ? c.body : c.tail);
        for (int k = 0; k < 3; ++k) px[static_cast<std::size_t>(k)] = rgb[static_cast<std::size_t>(part)][static_cast<std::size_t>(k)];
      }
      for (int k = 0; k < 3; ++k) {
        const int noise = static_cast<int>(rng.below(41)) - 20;
        img[(static_cast<std::size_t>(y) * side + x) * 3 + k] =
            static_cast<std::uint8_t>(std::clamp(px[static_cast<std::size_t>(k)] + noise, 0, 255));
      }
    }
  }
  return img;
}

ImageTensor render_tensor(const Creature& c, int side, std::uint64_t seed, const Preprocessing& prep) {
  const auto img = render(c, side, seed);
  return preprocess_rgb(img, side, side, prep);
}

std::vector<std::string> describe(const Creature& c) {
  const auto& p = palette();
  const auto& hd = p[static_cast<std::size_t>(c.head)];
  const auto& bd = p[static_cast<std::size_t>(c.body)];
  const auto& tl = p[static_cast<std::size_t>(c.tail)];
  return {
      "The " + c.name + " is a creature with a " + hd + " head, a " + bd + " body and a " + tl + " tail.",
      "A " + c.name + " has a " + bd + " body.",
      "The head of the " + c.name + " is " + hd + ".",
      "You can spot a " + c.name + " by its " + tl + " tail.",
  };
}

DescriptionFile description_file(const std::vector<Creature>& creatures) {
  DescriptionFile f;
  f.metadata.dataset = "toy";
  f.metadata.style = DescriptionStyle::kColumbia;
  f.metadata.generator = "toy-world";
  f.metadata.timestamp = "1970-01-01T00:00:00Z";
  f.metadata.k = 4;
  for (const auto& c : creatures) {
    ClassDescriptions d;
    d.class_name = c.name;
    d.placeholder = kPlaceholder;
    d.style = DescriptionStyle::kColumbia;
    d.sentences = describe(c);
    for (const auto& s : d.sentences) d.name_free_sentences.push_back(filter_name(c.name, s, kPlaceholder));
    f.put(std::move(d));
  }
  return f;
}

std::string image_ref(std::size_t creature, std::uint64_t image_seed) {
  return "toy:" + std::to_string(creature) + ":" + std::to_string(image_seed);
}

ImageResolver resolver(std::vector<Creature> creatures, int render_side) {
  return [creatures = std::move(creatures), render_side](const std::string& ref, const Preprocessing& prep) {
    const auto parts = split(ref, ':');
    if (parts.size() != 3 || parts[0] != "toy") return load_image(ref, prep);
    const auto idx = static_cast<std::size_t>(std::stoull(parts[1]));
    if (idx >= creatures.size()) throw DataError("toy image ref out of range: " + ref);
    return render_tensor(creatures[idx], render_side, std::stoull(parts[2]), prep);
  };
}

Catalog::Catalog(std::vector<Creature> creatures, std::size_t images_per_class, std::uint64_t seed)
    : creatures_(std::move(creatures)), per_class_(images_per_class), seed_(seed) {}

std::vector<std::string> Catalog::classes() const {
  std::vector<std::string> out;
  for (const auto& c : creatures_) out.push_back(c.name);
  return out;
}

std::vector<std::string> Catalog::images(const std::string& class_name) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < creatures_.size(); ++i) {
    if (creatures_[i].name != class_name) continue;
    for (std::size_t k = 0; k < per_class_; ++k) out.push_back(image_ref(i, seed_ * 1000003ULL + i * 1009ULL + k));
  }
  return out;
}

Source::Source(std::vector<Creature> creatures, std::size_t images_per_class, std::uint64_t seed, int render_side)
    : creatures_(std::move(creatures)), per_class_(images_per_class), seed_(seed), side_(render_side) {}

std::string Source::key(std::size_t i) const {
  return image_ref(i / per_class_, seed_ * 1000003ULL + (i / per_class_) * 1009ULL + i % per_class_) + "@" +
         std::to_string(side_) + ":" + creatures_[i / per_class_].name;
}

ImageTensor Source::load(std::size_t i, const Preprocessing& prep) const {
  const auto c = i / per_class_;
  return render_tensor(creatures_[c], side_, seed_ * 1000003ULL + c * 1009ULL + i % per_class_, prep);
}

}  // namespace realdesc::toy
