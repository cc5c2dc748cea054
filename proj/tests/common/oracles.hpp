#pragma once

// Reference implementations written independently of the library, shared by
// the unit tests and the acceptance binary.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "realdesc/scorer.hpp"
#include "realdesc/util.hpp"

namespace oracle {

// Lowercase, every non-alphanumeric run collapsed to one space, padded.
inline std::string squash(const std::string& s) {
  std::string out = " ";
  for (unsigned char c : s) {
    if (std::isalnum(c)) {
      out.push_back(static_cast<char>(std::tolower(c)));
    } else if (out.back() != ' ') {
      out.push_back(' ');
    }
  }
  if (out.back() != ' ') out.push_back(' ');
  return out;
}

inline std::string concat_words(const std::string& s) {
  std::string out;
  for (unsigned char c : s)
    if (std::isalnum(c)) out.push_back(static_cast<char>(std::tolower(c)));
  return out;
}

// Residual check: the full name, its concatenated form and its last word, as
// whole words after squashing separators and case.
inline bool naive_mentions(const std::string& text, const std::string& name, const std::string& placeholder) {
  const auto t = squash(text);
  const auto n = squash(name);
  if (t.find(n) != std::string::npos) return true;
  const auto words = realdesc::split(realdesc::trim(n), ' ');
  if (words.size() > 1 && t.find(" " + concat_words(name) + " ") != std::string::npos) return true;
  const auto& head = words.back();
  if (head.size() > 2 && head != realdesc::to_lower(placeholder) && t.find(" " + head + " ") != std::string::npos)
    return true;
  return false;
}

inline std::string random_casing(const std::string& s, realdesc::Rng& rng) {
  std::string out;
  const auto mode = rng.below(4);
  for (unsigned char c : s) {
    if (mode == 0) out.push_back(static_cast<char>(std::tolower(c)));
    else if (mode == 1) out.push_back(static_cast<char>(std::toupper(c)));
    else if (mode == 2) out.push_back(static_cast<char>(c));
    else out.push_back(static_cast<char>(rng.below(2) ? std::toupper(c) : std::tolower(c)));
  }
  return out;
}

inline std::string random_spacing(const std::string& s, realdesc::Rng& rng) {
  static const std::vector<std::string> seps = {" ", "  ", "-", "_", " - ", "\t"};
  std::string out;
  bool in_sep = false;
  const auto pick = seps[rng.below(seps.size())];
  for (char c : s) {
    if (c == ' ' || c == '-' || c == '_') {
      if (!in_sep) out += pick;
      in_sep = true;
    } else {
      out.push_back(c);
      in_sep = false;
    }
  }
  return out;
}

// Fills every "{}" of the frame with a randomly cased and spaced copy of name.
inline std::string inject(const std::string& frame, const std::string& name, realdesc::Rng& rng) {
  std::string sentence;
  for (std::size_t i = 0; i < frame.size(); ++i) {
    if (frame.compare(i, 2, "{}") == 0) {
      sentence += random_spacing(random_casing(name, rng), rng);
      ++i;
    } else {
      sentence.push_back(frame[i]);
    }
  }
  return sentence;
}

inline const std::vector<std::string>& injection_frames() {
  static const std::vector<std::string> frames = {"A {} has a long tail.", "You can spot {} by its colour.",
                                                  "The {}'s shape is distinctive.", "Many {} are seen here.",
                                                  "{} is common; the {} is loved.", "In a photo, ({}) appears."};
  return frames;
}

inline std::vector<double> row(const torch::Tensor& t, int64_t i) {
  auto r = t[i].to(torch::kFloat64).contiguous();
  return std::vector<double>(r.data_ptr<double>(), r.data_ptr<double>() + r.numel());
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Every cosine in double, first maximum wins.
inline int64_t brute_argmax(const torch::Tensor& image, const torch::Tensor& protos) {
  const auto q = row(image.unsqueeze(0), 0);
  int64_t best = 0;
  double best_score = -2.0;
  for (int64_t c = 0; c < protos.size(0); ++c) {
    const double s = cosine(q, row(protos, c));
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return best;
}

// Best k-subset by enumerating all subsets of size k.
inline std::set<std::size_t> exhaustive_top_k(const std::vector<double>& scores, std::size_t k) {
  const std::size_t n = scores.size();
  std::set<std::size_t> best;
  double best_sum = -1e300;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    std::size_t bits = 0;
    for (std::size_t i = 0; i < n; ++i) bits += (mask >> i) & 1u;
    if (bits != k) continue;
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) s += scores[i];
    if (s > best_sum) {
      best_sum = s;
      best.clear();
      for (std::size_t i = 0; i < n; ++i)
        if (mask & (1u << i)) best.insert(i);
    }
  }
  return best;
}

// Scores from a hash of (image, text): fixed per pair, independent across pairs.
inline realdesc::FunctionScorer hashed_scorer(std::uint64_t salt) {
  return realdesc::FunctionScorer([salt](const std::string& img, const std::vector<std::string>& texts) {
    std::vector<double> out;
    for (const auto& t : texts)
      out.push_back(static_cast<double>(realdesc::fnv1a64(img + "|" + t, salt) >> 11) / 9007199254740992.0);
    return out;
  });
}

// Pearson statistic for class visit counts when each round visits every class
// once plus `extra` top-up visits spread uniformly without replacement.
inline double visit_chi2(const std::vector<double>& counts, int64_t rounds, double extra) {
  const double n = static_cast<double>(counts.size());
  const double p = extra / n;
  const double mean = static_cast<double>(rounds) * (1.0 + p);
  const double var = static_cast<double>(rounds) * p * (1.0 - p);
  double chi2 = 0;
  for (double c : counts) chi2 += (c - mean) * (c - mean) / var;
  return chi2;
}

}  // namespace oracle
