#include "grounding/llm_parser.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "httplib.h"

#include "grounding/errors.hpp"

namespace grounding {

using nlohmann::json;

const std::string& default_llm_prompt() {
    static const std::string prompt = R"(You convert robot instructions into a structured form.
Work in three steps:
1. Identify the action the robot must perform.
2. Identify the source object the action applies to. If the robot itself moves, the source is "self".
3. Identify every target relation. Each relation is a referenced object together with the spatial predicate relating the goal location to that object.
Use only these predicates: left, right, above, below, left above, right above, left below, right below, close, far, front, behind.
Keep the relations in the order they appear in the instruction.
Answer with a single JSON object and nothing else:
{"action": <verb>, "source": <object>, "target": [[<referenced object>, <predicate>], ...]}

Input: place the red cube to the left of the blue bowl and close to the green ring.
Output: {"action": "place", "source": "red cube", "target": [["blue bowl", "left"], ["green ring", "close"]]}

Input: go to the right above of the yellow box.
Output: {"action": "go", "source": "self", "target": [["yellow box", "right above"]]}

Input: set the white cup below the black plate, far from the red bowl, and right of the gray cube.
Output: {"action": "set", "source": "white cup", "target": [["black plate", "below"], ["red bowl", "far"], ["gray cube", "right"]]})";
    return prompt;
}

LlmClientConfig LlmClientConfig::from_env() {
    LlmClientConfig c;
    if (const char* e = std::getenv("LLM_ENDPOINT")) {
        c.endpoint = e;
    }
    if (const char* k = std::getenv("LLM_API_KEY")) {
        c.api_key = k;
    }
    if (const char* m = std::getenv("LLM_MODEL")) {
        c.model = m;
    }
    return c;
}

json chat_request_body(const ChatRequest& req) {
    return {
        {"model", req.model},
        {"temperature", 0},
        {"messages",
         json::array({{{"role", "system"}, {"content", req.system}}, {{"role", "user"}, {"content", req.user}}})},
    };
}

std::string request_hash(const ChatRequest& req) {
    const std::uint64_t h = fnv1a64(chat_request_body(req).dump());
    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = hex[(h >> (4 * (15 - i))) & 0xf];
    }
    return out;
}

HttpChatTransport::HttpChatTransport(LlmClientConfig config) : config_(std::move(config)) {
    if (config_.timeout.count() <= 0) {
        throw DomainError("LLM client timeout must be positive");
    }
    const std::string& url = config_.endpoint;
    const std::string scheme = "http://";
    if (url.rfind(scheme, 0) != 0) {
        throw TransportError("LLM endpoint must be an http:// URL (got '" + url + "')");
    }
    const auto slash = url.find('/', scheme.size());
    base_ = slash == std::string::npos ? url : url.substr(0, slash);
    path_ = slash == std::string::npos ? "/v1/chat/completions" : url.substr(slash);
}

std::string HttpChatTransport::complete(const ChatRequest& req) {
    httplib::Client client(base_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    httplib::Headers headers;
    if (!config_.api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + config_.api_key);
    }
    auto res = client.Post(path_, headers, chat_request_body(req).dump(), "application/json");
    if (!res) {
        throw TransportError("LLM request to " + config_.endpoint + " failed: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
        throw TransportError("LLM endpoint returned HTTP " + std::to_string(res->status));
    }
    json body;
    try {
        body = json::parse(res->body);
    } catch (const json::parse_error&) {
        throw SchemaError("LLM response envelope is not JSON");
    }
    try {
        return body.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
        throw SchemaError("LLM response lacks choices[0].message.content");
    }
}

ReplayTransport::ReplayTransport(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read replay file " + path);
    }
    json records;
    try {
        records = json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError("replay file " + path + " is not valid JSON", e.what());
    }
    load(records);
}

ReplayTransport::ReplayTransport(const json& records) {
    load(records);
}

void ReplayTransport::load(const json& records) {
    if (!records.is_array()) {
        throw SchemaError("replay transcript must be a JSON array");
    }
    for (const auto& r : records) {
        if (!r.is_object() || !r.contains("request_hash") || !r.contains("reply") || !r["request_hash"].is_string() ||
            !r["reply"].is_string()) {
            throw SchemaError("replay record must have string fields request_hash and reply");
        }
        replies_.emplace_back(r["request_hash"].get<std::string>(), r["reply"].get<std::string>());
    }
}

std::string ReplayTransport::complete(const ChatRequest& req) {
    const std::string h = request_hash(req);
    for (const auto& [hash, reply] : replies_) {
        if (hash == h) {
            return reply;
        }
    }
    throw TransportError("replay transcript has no reply for request " + h);
}

std::unique_ptr<ChatTransport> make_transport(const LlmClientConfig& config) {
    const std::string prefix = "replay:";
    if (config.endpoint.rfind(prefix, 0) == 0) {
        return std::make_unique<ReplayTransport>(config.endpoint.substr(prefix.size()));
    }
    if (config.endpoint.empty()) {
        throw TransportError("no LLM endpoint configured (set LLM_ENDPOINT)");
    }
    return std::make_unique<HttpChatTransport>(config);
}

ChatRequest build_llm_request(std::string_view instruction, const LlmClientConfig& config) {
    return {config.model, config.prompt, "Input: " + std::string(instruction) + "\nOutput:"};
}

namespace {

// First balanced {...} in text, skipping braces inside JSON strings.
std::string extract_json_object(std::string_view text) {
    const auto start = text.find('{');
    if (start == std::string_view::npos) {
        throw SchemaError("LLM reply contains no JSON object", std::string(text));
    }
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) {
                return std::string(text.substr(start, i - start + 1));
            }
        }
    }
    throw SchemaError("LLM reply has an unterminated JSON object", std::string(text));
}

std::string trimmed_lower(const std::string& s) {
    std::string out;
    for (const auto& t : text_tokens(s)) {
        if (!out.empty()) {
            out += ' ';
        }
        out += t;
    }
    return out;
}

}  // namespace

ParsedInstruction parse_llm_reply(std::string_view reply) {
    json j;
    try {
        j = json::parse(extract_json_object(reply));
    } catch (const json::parse_error& e) {
        throw SchemaError("LLM reply JSON does not parse", e.what());
    }
    if (!j.is_object()) {
        throw SchemaError("LLM reply must be a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        if (key != "action" && key != "source" && key != "target") {
            throw SchemaError("LLM reply has unexpected field '" + key + "'");
        }
    }
    if (!j.contains("action") || !j["action"].is_string()) {
        throw SchemaError("LLM reply field 'action' must be a string");
    }
    if (!j.contains("source") || !j["source"].is_string()) {
        throw SchemaError("LLM reply field 'source' must be a string");
    }
    if (!j.contains("target") || !j["target"].is_array() || j["target"].empty()) {
        throw SchemaError("LLM reply field 'target' must be a non-empty array");
    }
    ParsedInstruction out;
    out.action = trimmed_lower(j["action"].get<std::string>());
    out.source = trimmed_lower(j["source"].get<std::string>());
    if (out.action.empty()) {
        throw SchemaError("LLM reply has an empty action");
    }
    if (out.source.empty()) {
        out.source = kSelfSource;
    }
    for (const auto& t : j["target"]) {
        if (!t.is_array() || t.size() != 2 || !t[0].is_string() || !t[1].is_string()) {
            throw SchemaError("LLM reply target entries must be [referent, predicate] string pairs");
        }
        TargetPhrase phrase;
        phrase.referent = trimmed_lower(t[0].get<std::string>());
        phrase.predicate = normalize_predicate(t[1].get<std::string>());
        if (phrase.referent.empty()) {
            throw SchemaError("LLM reply has an empty referent");
        }
        if (phrase.predicate.empty()) {
            throw SchemaError("LLM reply uses unknown predicate '" + t[1].get<std::string>() + "'");
        }
        out.targets.push_back(std::move(phrase));
    }
    return out;
}

ParsedInstruction parse_llm(std::string_view instruction, const LlmClientConfig& config, ChatTransport& transport) {
    return parse_llm_reply(transport.complete(build_llm_request(instruction, config)));
}

ParsedInstruction parse_llm(std::string_view instruction, const LlmClientConfig& config) {
    auto transport = make_transport(config);
    return parse_llm(instruction, config, *transport);
}

std::string format_llm_reply(const ParsedInstruction& parsed) {
    json targets = json::array();
    for (const auto& t : parsed.targets) {
        targets.push_back({t.referent, t.predicate});
    }
    json j = {{"action", parsed.action}, {"source", parsed.source}, {"target", std::move(targets)}};
    return j.dump();
}

}  // namespace grounding
