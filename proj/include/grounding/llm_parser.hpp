#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "grounding/parser.hpp"

namespace grounding {

/// Versioned system prompt: task description, the three reasoning steps,
/// and three worked demonstrations. Mirrored in docs/llm_prompt.md.
const std::string& default_llm_prompt();
inline constexpr const char* kLlmPromptVersion = "v1";

struct LlmClientConfig {
    /// "http://host:port/v1/chat/completions", or "replay:<file>" for the
    /// offline transcript stub.
    std::string endpoint;
    std::string model = "gpt-3.5-turbo";
    std::string api_key;
    std::chrono::milliseconds timeout{10000};
    std::string prompt = default_llm_prompt();

    /// Reads LLM_ENDPOINT / LLM_API_KEY / LLM_MODEL when set.
    static LlmClientConfig from_env();
};

struct ChatRequest {
    std::string model;
    std::string system;
    std::string user;
};

/// OpenAI-compatible chat-completion request body.
nlohmann::json chat_request_body(const ChatRequest& req);
/// 16 hex digits of FNV-1a over the serialized request body.
std::string request_hash(const ChatRequest& req);

class ChatTransport {
public:
    virtual ~ChatTransport() = default;
    /// Returns the assistant message content. Throws TransportError on
    /// connection problems and SchemaError on a malformed envelope.
    virtual std::string complete(const ChatRequest& req) = 0;
};

/// Blocking HTTP client for an OpenAI-compatible endpoint (plain http).
class HttpChatTransport : public ChatTransport {
public:
    explicit HttpChatTransport(LlmClientConfig config);
    std::string complete(const ChatRequest& req) override;

private:
    LlmClientConfig config_;
    std::string base_;
    std::string path_;
};

/// Serves recorded replies keyed by request_hash. File format: a JSON array
/// of {"request_hash": "...", "reply": "..."} records.
class ReplayTransport : public ChatTransport {
public:
    explicit ReplayTransport(const std::string& path);
    explicit ReplayTransport(const nlohmann::json& records);
    std::string complete(const ChatRequest& req) override;
    std::size_t size() const { return replies_.size(); }

private:
    void load(const nlohmann::json& records);
    std::vector<std::pair<std::string, std::string>> replies_;
};

std::unique_ptr<ChatTransport> make_transport(const LlmClientConfig& config);

ChatRequest build_llm_request(std::string_view instruction, const LlmClientConfig& config);

/// Extracts and strictly validates the JSON object in a model reply:
/// {"action": str, "source": str, "target": [[referent, predicate], ...]}.
ParsedInstruction parse_llm_reply(std::string_view reply);

ParsedInstruction parse_llm(std::string_view instruction, const LlmClientConfig& config, ChatTransport& transport);
ParsedInstruction parse_llm(std::string_view instruction, const LlmClientConfig& config);

/// The reply text a well-behaved model would give for parsed; used to record
/// replay transcripts.
std::string format_llm_reply(const ParsedInstruction& parsed);

}  // namespace grounding
