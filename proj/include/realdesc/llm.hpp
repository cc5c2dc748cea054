#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"

namespace realdesc {

enum class LlmTask { kDescribe, kRewrite, kProbeAttributes, kProbeValidate };

std::string to_string(LlmTask task);

struct LlmRequest {
  LlmTask task = LlmTask::kDescribe;
  std::string class_name;
  std::string placeholder;
  std::string style;
  int k = 0;
  /// Re-query counter; providers may vary their answer with it.
  int attempt = 0;
  /// Task input (the sentence to rewrite, the attribute to validate, ...).
  std::string input;
  /// Fully rendered prompt text. Remote clients send only this.
  std::string prompt;
};

/// Anything that answers LLM-style requests with free text.
class TextGenerator {
 public:
  virtual ~TextGenerator() = default;
  virtual std::string complete(const LlmRequest& request) = 0;
  virtual std::string name() const = 0;
  /// True when identical requests always yield identical text.
  virtual bool deterministic() const { return false; }
};

/// Append-only JSON-lines audit log of prompts and responses.
class TranscriptLog {
 public:
  explicit TranscriptLog(std::filesystem::path path);
  void append(const nlohmann::json& record);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
};

/// Prompt template asset for a description style ("oxford", "columbia"),
/// with {class} and {k} substituted.
std::string describe_prompt(const std::string& style, const std::string& class_name, int k);
std::string rewrite_prompt(const std::string& class_name, const std::string& sentence, const std::string& placeholder);
std::string probe_attributes_prompt(const std::string& class_name);
std::string probe_validate_prompt(const std::string& class_name, const std::string& statement);

/// Chat-completions client. Endpoint and key come from REALDESC_LLM_ENDPOINT
/// and REALDESC_LLM_KEY; REALDESC_LLM_MODEL picks the model name.
class RemoteLlmClient final : public TextGenerator {
 public:
  struct Options {
    std::string endpoint;
    std::string api_key;
    std::string model = "gpt-4";
    int max_retries = 3;
    double temperature = 0.7;
    std::shared_ptr<TranscriptLog> log;
  };

  explicit RemoteLlmClient(Options options);
  /// Throws ConfigError when credentials are missing.
  static std::unique_ptr<RemoteLlmClient> from_env(std::shared_ptr<TranscriptLog> log = nullptr);

  std::string complete(const LlmRequest& request) override;
  std::string name() const override { return "remote:" + options_.model; }

 private:
  Options options_;
};

/// Offline stand-in for the LLM service, answering from versioned fixture
/// tables under assets/fixtures. Output is a pure function of the request.
class FixtureProvider final : public TextGenerator {
 public:
  explicit FixtureProvider(std::filesystem::path fixture_dir = {});

  std::string complete(const LlmRequest& request) override;
  std::string name() const override { return "fixtures"; }
  bool deterministic() const override { return true; }

  bool knows(const std::string& class_name) const;
  /// Visual attribute phrases for a class ("has a short tawny coat", ...).
  const std::vector<std::string>& phrases(const std::string& class_name) const;

  struct ProbeFact {
    std::string kind;
    std::string element;
    std::string value;
    bool valid = true;
  };

 private:
  struct Entry {
    std::vector<std::string> phrases;
    std::string kind;  // narrative noun, e.g. "cat"
  };

  std::string describe(const LlmRequest& request) const;

  std::map<std::string, Entry> entries_;  // keyed by lowercase class name
  std::map<std::string, std::vector<ProbeFact>> probe_;
};

}  // namespace realdesc
