#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ape/errors.hpp"

namespace ape {

struct TokenUsage {
    std::uint64_t tokens_in = 0;
    std::uint64_t tokens_out = 0;

    bool operator==(const TokenUsage&) const = default;
};

struct ToolCall {
    std::string id;
    std::string name;
    nlohmann::json arguments = nlohmann::json::object();
};

/// One assistant turn: free text, requested tool calls, token accounting.
struct ModelResponse {
    std::string message;
    std::vector<ToolCall> tool_calls;
    TokenUsage usage;
    bool usage_explicit = false;  // scripted entries may pin exact token counts
};

nlohmann::json to_json(const ModelResponse& r);
ModelResponse model_response_from_json(const nlohmann::json& j);

/// Token accounting for clients that do not report usage themselves: the
/// number of whitespace-separated tokens.
std::uint64_t whitespace_token_count(std::string_view text);

class ModelUnavailableError : public Error {
public:
    explicit ModelUnavailableError(const std::string& why) : Error("model-unavailable", why) {}
};

class ModelClient {
public:
    virtual ~ModelClient() = default;
    virtual std::string model_name() const = 0;
    /// `messages` is a chat-style array ({role, content, ...}); `tools`
    /// describes the registry. Implementations must fill usage (the caller
    /// derives whitespace counts when a response leaves it zeroed and not
    /// explicit).
    virtual ModelResponse complete(const nlohmann::json& messages, const nlohmann::json& tools) = 0;
};

/// Returns canned responses in order; after the script runs out it keeps
/// answering with a plain message so the loop terminates on its limits.
class ScriptedClient : public ModelClient {
public:
    explicit ScriptedClient(std::vector<ModelResponse> script, std::string model = "scripted");
    std::string model_name() const override { return model_; }
    ModelResponse complete(const nlohmann::json& messages, const nlohmann::json& tools) override;
    std::size_t calls() const { return next_; }
    bool exhausted() const { return next_ >= script_.size(); }

private:
    std::vector<ModelResponse> script_;
    std::size_t next_ = 0;
    std::string model_;
};

/// Replays a recorded `*.transcript.jsonl` (one model response per line).
class PlaybackClient : public ScriptedClient {
public:
    explicit PlaybackClient(const std::filesystem::path& transcript);
    static std::vector<ModelResponse> load_transcript(const std::filesystem::path& transcript);
};

/// Chat-completion HTTP contract: POST {messages, tools} expecting
/// {message, tool_calls, usage: {tokens_in, tokens_out}}.
class HttpModelClient : public ModelClient {
public:
    HttpModelClient(std::string host, int port, std::string path = "/complete",
                    std::string model = "http");
    std::string model_name() const override { return model_; }
    ModelResponse complete(const nlohmann::json& messages, const nlohmann::json& tools) override;

private:
    std::string host_;
    int port_;
    std::string path_;
    std::string model_;
};

/// Deterministic heuristic driver used by demos and end-to-end tests. It
/// reads the scaffold's prompt and behaves per task kind: proving and
/// engineering tasks get the declaration lines found in the instruction
/// written to the working file and submitted; judgment tasks accept unless
/// the solution diff carries a `sorry` placeholder; synthesis and
/// annotation tasks submit structured text derived from the prompt fields.
class RuleBasedClient : public ModelClient {
public:
    explicit RuleBasedClient(std::string model = "rule-based") : model_(std::move(model)) {}
    std::string model_name() const override { return model_; }
    ModelResponse complete(const nlohmann::json& messages, const nlohmann::json& tools) override;

    /// Extracts the text of `field <label>:` ... up to the next field header.
    static std::string find_field(const std::string& text, const std::string& label);

private:
    std::string model_;
};

}  // namespace ape
