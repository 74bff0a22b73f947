#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "moesim/trace.hpp"

namespace moesim {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Float encoding: little-endian IEEE-754 binary32, base64 (RFC 4648) in text.

namespace detail {

inline void append_f32le(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

inline float read_f32le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

constexpr std::string_view kB64 =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t n = (std::uint8_t(bytes[i]) << 16) | (std::uint8_t(bytes[i + 1]) << 8) |
                            std::uint8_t(bytes[i + 2]);
    for (int s = 18; s >= 0; s -= 6) out.push_back(kB64[(n >> s) & 63]);
  }
  const std::size_t rest = bytes.size() - i;
  if (rest > 0) {
    std::uint32_t n = std::uint8_t(bytes[i]) << 16;
    if (rest == 2) n |= std::uint8_t(bytes[i + 1]) << 8;
    out.push_back(kB64[(n >> 18) & 63]);
    out.push_back(kB64[(n >> 12) & 63]);
    out.push_back(rest == 2 ? kB64[(n >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

inline std::string base64_decode(std::string_view text) {
  std::array<int, 256> table{};
  table.fill(-1);
  for (std::size_t i = 0; i < kB64.size(); ++i) table[std::uint8_t(kB64[i])] = int(i);
  if (text.size() % 4 != 0) throw InputError("base64: length is not a multiple of 4");
  std::string out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::uint32_t n = 0;
    int pad = 0;
    for (int j = 0; j < 4; ++j) {
      const char c = text[i + j];
      if (c == '=' && i + 4 == text.size() && j >= 2) {
        ++pad;
        n <<= 6;
        continue;
      }
      const int v = table[std::uint8_t(c)];
      if (v < 0 || pad) throw InputError("base64: invalid character");
      n = (n << 6) | std::uint32_t(v);
    }
    out.push_back(char((n >> 16) & 0xFF));
    if (pad < 2) out.push_back(char((n >> 8) & 0xFF));
    if (pad < 1) out.push_back(char(n & 0xFF));
  }
  return out;
}

}  // namespace detail

inline std::string encode_floats(std::span<const float> values) {
  std::string raw;
  raw.reserve(values.size() * 4);
  for (float v : values) detail::append_f32le(raw, v);
  return detail::base64_encode(raw);
}

inline std::vector<float> decode_floats(std::string_view text) {
  const std::string raw = detail::base64_decode(text);
  if (raw.size() % 4 != 0) throw InputError("float payload is not a multiple of 4 bytes");
  std::vector<float> out(raw.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = detail::read_f32le(reinterpret_cast<const unsigned char*>(raw.data()) + 4 * i);
  return out;
}

// ---------------------------------------------------------------------------
// JSON mappings.

inline void to_json(json& j, const ModelSpec& m) {
  j = json{{"n_layers", m.n_layers}, {"n_experts", m.n_experts}, {"top_k", m.top_k},
           {"d_model", m.d_model},   {"seed", m.seed}};
}

inline void from_json(const json& j, ModelSpec& m) {
  const ModelSpec d{};
  m.n_layers = j.value("n_layers", d.n_layers);
  m.n_experts = j.value("n_experts", d.n_experts);
  m.top_k = j.value("top_k", d.top_k);
  m.d_model = j.value("d_model", d.d_model);
  m.seed = j.value("seed", d.seed);
}

inline void to_json(json& j, const TraceSpec& s) {
  j = json{{"model", s.model},
           {"prompt_len", s.prompt_len},
           {"decode_len", s.decode_len},
           {"n_sequences", s.n_sequences},
           {"layer_similarity", s.layer_similarity},
           {"token_locality", s.token_locality},
           {"affinity_skew", s.affinity_skew},
           {"gate_scale", s.gate_scale},
           {"shared_gates", s.shared_gates},
           {"seed", s.seed}};
}

inline void from_json(const json& j, TraceSpec& s) {
  const TraceSpec d{};
  s.model = j.contains("model") ? j.at("model").get<ModelSpec>() : d.model;
  s.prompt_len = j.value("prompt_len", d.prompt_len);
  s.decode_len = j.value("decode_len", d.decode_len);
  s.n_sequences = j.value("n_sequences", d.n_sequences);
  s.layer_similarity = j.value("layer_similarity", d.layer_similarity);
  s.token_locality = j.value("token_locality", d.token_locality);
  s.affinity_skew = j.value("affinity_skew", d.affinity_skew);
  s.gate_scale = j.value("gate_scale", d.gate_scale);
  s.shared_gates = j.value("shared_gates", d.shared_gates);
  s.seed = j.value("seed", d.seed);
}

/// Parses JSON, turning library exceptions into InputError.
template <class T>
T parse_json_as(const std::string& text, const std::string& what) {
  try {
    return json::parse(text).get<T>();
  } catch (const json::exception& e) {
    throw InputError(what + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Trace files.

inline constexpr std::string_view kTraceFormat = "moesim-trace";
inline constexpr int kTraceVersion = 1;
inline constexpr std::string_view kBinaryMagic = "MOETRACE";

enum class TraceEncoding { JsonLines, Binary };

namespace detail {

inline json trace_header(const Trace& t, bool with_gate_data) {
  json gates = json::array();
  for (const auto& g : t.gates) {
    json e{{"layer", g.layer}, {"rows", g.rows}, {"cols", g.cols}};
    if (with_gate_data) e["data"] = encode_floats(g.weights);
    gates.push_back(std::move(e));
  }
  json h{{"format", kTraceFormat},
         {"version", kTraceVersion},
         {"float_encoding", "base64-f32le"},
         {"model", t.model},
         {"generator", t.generator ? json(*t.generator) : json(nullptr)},
         {"gates", std::move(gates)}};
  return h;
}

inline void apply_header(const json& h, Trace& t, bool with_gate_data) {
  if (h.value("format", std::string{}) != kTraceFormat)
    throw InputError("trace: not a moesim trace (bad format tag)");
  if (h.value("version", 0) != kTraceVersion) throw InputError("trace: unsupported version");
  t.model = h.at("model").get<ModelSpec>();
  if (h.contains("generator") && !h.at("generator").is_null())
    t.generator = h.at("generator").get<TraceSpec>();
  for (const auto& g : h.at("gates")) {
    GateMatrix m;
    m.layer = g.at("layer").get<std::size_t>();
    m.rows = g.at("rows").get<std::size_t>();
    m.cols = g.at("cols").get<std::size_t>();
    if (with_gate_data) m.weights = decode_floats(g.at("data").get<std::string>());
    t.gates.push_back(std::move(m));
  }
}

}  // namespace detail

inline void write_trace_jsonl(std::ostream& os, const Trace& t) {
  os << detail::trace_header(t, true).dump() << '\n';
  const std::size_t d = t.model.d_model;
  for (const auto& s : t.sequences) {
    os << json{{"type", "sequence"},
               {"seq", s.id},
               {"prompt_len", s.prompt.size()},
               {"decode_len", s.decode.size()}}
              .dump()
       << '\n';
    std::size_t pos = 0;
    for (const auto* part : {&s.prompt, &s.decode}) {
      const char* phase = part == &s.prompt ? "prompt" : "decode";
      for (const auto& tok : *part) {
        json x = json::array();
        for (std::size_t l = 0; l < t.model.n_layers; ++l) x.push_back(encode_floats(tok.layer(l, d)));
        os << json{{"type", "token"}, {"seq", s.id}, {"pos", pos++}, {"phase", phase}, {"x", x}}.dump()
           << '\n';
      }
    }
  }
}

inline Trace read_trace_jsonl(std::istream& is) {
  Trace t;
  std::string line;
  std::size_t row = 0;
  auto fail = [&](const std::string& why) {
    throw InputError("trace row " + std::to_string(row) + ": " + why);
  };
  if (!std::getline(is, line)) throw InputError("trace: empty file");
  try {
    detail::apply_header(json::parse(line), t, true);
  } catch (const json::exception& e) {
    throw InputError(std::string("trace header: ") + e.what());
  }
  SequenceTrace* cur = nullptr;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    try {
      const json r = json::parse(line);
      const std::string type = r.at("type").get<std::string>();
      if (type == "sequence") {
        t.sequences.push_back({r.at("seq").get<std::uint32_t>(), {}, {}});
        cur = &t.sequences.back();
      } else if (type == "token") {
        if (!cur) fail("token before any sequence marker");
        if (r.at("seq").get<std::uint32_t>() != cur->id) fail("token sequence id mismatch");
        TokenInputs tok;
        const auto& x = r.at("x");
        if (x.size() != t.model.n_layers) fail("wrong number of layer vectors");
        for (const auto& v : x) {
          const auto f = decode_floats(v.get<std::string>());
          if (f.size() != t.model.d_model) fail("gating input has wrong dimension");
          tok.data.insert(tok.data.end(), f.begin(), f.end());
        }
        const std::string phase = r.at("phase").get<std::string>();
        if (phase == "prompt") {
          if (!cur->decode.empty()) fail("prompt token after decode tokens");
          cur->prompt.push_back(std::move(tok));
        } else if (phase == "decode") {
          cur->decode.push_back(std::move(tok));
        } else {
          fail("unknown phase '" + phase + "'");
        }
      } else {
        fail("unknown record type '" + type + "'");
      }
    } catch (const json::exception& e) {
      fail(e.what());
    } catch (const InputError& e) {
      const std::string msg = e.what();
      if (msg.rfind("trace row", 0) == 0) throw;
      fail(msg);
    }
  }
  t.validate();
  return t;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class ByteReader {
 public:
  explicit ByteReader(std::string data) : data_(std::move(data)) {}
  bool done() const { return pos_ >= data_.size(); }
  const unsigned char* take(std::size_t n) {
    if (pos_ + n > data_.size()) throw InputError("binary trace: truncated at byte " + std::to_string(pos_));
    const auto* p = reinterpret_cast<const unsigned char*>(data_.data()) + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8() { return *take(1); }
  std::uint32_t u32() {
    const auto* p = take(4);
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
  }
  std::vector<float> floats(std::size_t n) {
    const auto* p = take(4 * n);
    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = read_f32le(p + 4 * i);
    return out;
  }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

enum : std::uint8_t { kRecEnd = 0, kRecSequence = 1, kRecPrompt = 2, kRecDecode = 3 };

}  // namespace detail

/// Compact form: magic, u32 version, u32 header length, header JSON without
/// gate payloads, raw gate floats, then tagged records.
inline void write_trace_binary(std::ostream& os, const Trace& t) {
  std::string out(kBinaryMagic);
  detail::put_u32(out, kTraceVersion);
  const std::string header = detail::trace_header(t, false).dump();
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  for (const auto& g : t.gates)
    for (float v : g.weights) detail::append_f32le(out, v);
  for (const auto& s : t.sequences) {
    out.push_back(static_cast<char>(detail::kRecSequence));
    detail::put_u32(out, s.id);
    for (const auto* part : {&s.prompt, &s.decode})
      for (const auto& tok : *part) {
        out.push_back(static_cast<char>(part == &s.prompt ? detail::kRecPrompt : detail::kRecDecode));
        for (float v : tok.data) detail::append_f32le(out, v);
      }
  }
  out.push_back(static_cast<char>(detail::kRecEnd));
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
}

inline Trace read_trace_binary(std::istream& is) {
  std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  detail::ByteReader r(std::move(all));
  const auto* magic = r.take(kBinaryMagic.size());
  if (std::memcmp(magic, kBinaryMagic.data(), kBinaryMagic.size()) != 0)
    throw InputError("binary trace: bad magic");
  if (r.u32() != kTraceVersion) throw InputError("binary trace: unsupported version");
  const std::uint32_t hlen = r.u32();
  const auto* hp = r.take(hlen);
  Trace t;
  try {
    detail::apply_header(json::parse(std::string(reinterpret_cast<const char*>(hp), hlen)), t, false);
  } catch (const json::exception& e) {
    throw InputError(std::string("binary trace header: ") + e.what());
  }
  for (auto& g : t.gates) g.weights = r.floats(g.rows * g.cols);
  const std::size_t width = t.model.n_layers * t.model.d_model;
  SequenceTrace* cur = nullptr;
  std::size_t row = 0;
  for (;;) {
    const std::uint8_t tag = r.u8();
    if (tag == detail::kRecEnd) break;
    ++row;
    if (tag == detail::kRecSequence) {
      t.sequences.push_back({r.u32(), {}, {}});
      cur = &t.sequences.back();
    } else if (tag == detail::kRecPrompt || tag == detail::kRecDecode) {
      if (!cur) throw InputError("binary trace record " + std::to_string(row) + ": token before sequence");
      TokenInputs tok{r.floats(width)};
      if (tag == detail::kRecPrompt) {
        if (!cur->decode.empty())
          throw InputError("binary trace record " + std::to_string(row) + ": prompt after decode");
        cur->prompt.push_back(std::move(tok));
      } else {
        cur->decode.push_back(std::move(tok));
      }
    } else {
      throw InputError("binary trace record " + std::to_string(row) + ": unknown tag");
    }
  }
  if (!r.done()) throw InputError("binary trace: trailing bytes after end record");
  t.validate();
  return t;
}

inline TraceEncoding detect_encoding(std::istream& is) {
  char buf[8] = {};
  is.read(buf, sizeof buf);
  const auto n = is.gcount();
  is.clear();
  is.seekg(0);
  return (n == 8 && std::string_view(buf, 8) == kBinaryMagic) ? TraceEncoding::Binary
                                                              : TraceEncoding::JsonLines;
}

inline Trace load_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open trace file '" + path + "'");
  return detect_encoding(in) == TraceEncoding::Binary ? read_trace_binary(in) : read_trace_jsonl(in);
}

inline void save_trace(const std::string& path, const Trace& t, TraceEncoding enc) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write trace file '" + path + "'");
  if (enc == TraceEncoding::Binary)
    write_trace_binary(out, t);
  else
    write_trace_jsonl(out, t);
}

}  // namespace moesim
