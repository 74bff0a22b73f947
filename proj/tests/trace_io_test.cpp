#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "moesim/trace_io.hpp"
#include "moesim/tracegen.hpp"

namespace moesim {
namespace {

Trace small() {
  TraceSpec s;
  s.model = {2, 4, 2, 6, 0};
  s.prompt_len = 3;
  s.decode_len = 7;
  s.n_sequences = 2;
  s.seed = 5;
  return generate(s);
}

void expect_same(const Trace& a, const Trace& b) {
  EXPECT_EQ(a.model, b.model);
  ASSERT_EQ(a.gates.size(), b.gates.size());
  for (std::size_t l = 0; l < a.gates.size(); ++l) EXPECT_EQ(a.gates[l].weights, b.gates[l].weights);
  ASSERT_EQ(a.sequences.size(), b.sequences.size());
  for (std::size_t s = 0; s < a.sequences.size(); ++s) {
    EXPECT_EQ(a.sequences[s].id, b.sequences[s].id);
    ASSERT_EQ(a.sequences[s].prompt.size(), b.sequences[s].prompt.size());
    ASSERT_EQ(a.sequences[s].decode.size(), b.sequences[s].decode.size());
    for (std::size_t t = 0; t < a.sequences[s].prompt.size(); ++t)
      EXPECT_EQ(a.sequences[s].prompt[t].data, b.sequences[s].prompt[t].data);
    for (std::size_t t = 0; t < a.sequences[s].decode.size(); ++t)
      EXPECT_EQ(a.sequences[s].decode[t].data, b.sequences[s].decode[t].data);
  }
  ASSERT_EQ(a.generator.has_value(), b.generator.has_value());
  if (a.generator) {
    EXPECT_EQ(a.generator->layer_similarity, b.generator->layer_similarity);
  }
}

TEST(Base64, KnownVectors) {
  EXPECT_EQ(detail::base64_encode(""), "");
  EXPECT_EQ(detail::base64_encode("f"), "Zg==");
  EXPECT_EQ(detail::base64_encode("fo"), "Zm8=");
  EXPECT_EQ(detail::base64_encode("foobar"), "Zm9vYmFy");
  EXPECT_EQ(detail::base64_decode("Zm9vYmE="), "fooba");
  EXPECT_THROW(detail::base64_decode("Zm9*"), InputError);
}

TEST(Floats, LittleEndianRoundTrip) {
  const std::vector<float> v{0.0f, -1.5f, 3.25e-8f, 1e30f};
  EXPECT_EQ(decode_floats(encode_floats(v)), v);
  EXPECT_EQ(encode_floats(std::vector<float>{1.0f}), "AACAPw==");
}

TEST(TraceFile, JsonLinesRoundTrip) {
  const Trace t = small();
  std::stringstream ss;
  write_trace_jsonl(ss, t);
  expect_same(t, read_trace_jsonl(ss));
}

TEST(TraceFile, BinaryRoundTrip) {
  const Trace t = small();
  std::stringstream ss;
  write_trace_binary(ss, t);
  expect_same(t, read_trace_binary(ss));
}

TEST(TraceFile, ConvertBetweenFormatsOnDisk) {
  const auto dir = std::filesystem::temp_directory_path() / "moesim_trace_io_test";
  std::filesystem::create_directories(dir);
  const Trace t = small();
  save_trace((dir / "a.jsonl").string(), t, TraceEncoding::JsonLines);
  save_trace((dir / "b.bin").string(), load_trace((dir / "a.jsonl").string()), TraceEncoding::Binary);
  save_trace((dir / "c.jsonl").string(), load_trace((dir / "b.bin").string()), TraceEncoding::JsonLines);
  expect_same(t, load_trace((dir / "c.jsonl").string()));
  std::ifstream a(dir / "a.jsonl"), c(dir / "c.jsonl");
  std::stringstream sa, sc;
  sa << a.rdbuf();
  sc << c.rdbuf();
  EXPECT_EQ(sa.str(), sc.str());
  std::filesystem::remove_all(dir);
}

TEST(TraceFile, MalformedRowReportsRowIndex) {
  std::stringstream ss;
  write_trace_jsonl(ss, small());
  std::string text = ss.str();
  // Corrupt the third record.
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) pos = text.find('\n', pos) + 1;
  text.insert(pos, "{\"type\":\"token\",\"seq\":0,\"pos\":0,\"phase\":\"prompt\",\"x\":[\"AAAA\"]}\n");
  std::stringstream bad(text);
  try {
    read_trace_jsonl(bad);
    FAIL() << "expected an error";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("trace row 3"), std::string::npos) << e.what();
  }
}

TEST(TraceFile, RejectsForeignHeader) {
  std::stringstream ss("{\"format\":\"other\"}\n");
  EXPECT_THROW(read_trace_jsonl(ss), InputError);
  std::stringstream bin("MOETRACX0000");
  EXPECT_THROW(read_trace_binary(bin), InputError);
}

TEST(TraceFile, RejectsTruncatedBinary) {
  std::stringstream ss;
  write_trace_binary(ss, small());
  std::string text = ss.str();
  text.resize(text.size() - 9);
  std::stringstream cut(text);
  EXPECT_THROW(read_trace_binary(cut), InputError);
}

TEST(TraceFile, MissingFileIsInputError) {
  EXPECT_THROW(load_trace("/nonexistent/trace.jsonl"), InputError);
}

TEST(TraceSpecJson, RoundTrip) {
  TraceSpec s;
  s.layer_similarity = 0.37;
  s.affinity_skew = 2.5;
  s.shared_gates = true;
  const json j = s;
  const auto back = j.get<TraceSpec>();
  EXPECT_EQ(back.layer_similarity, 0.37);
  EXPECT_EQ(back.affinity_skew, 2.5);
  EXPECT_TRUE(back.shared_gates);
  EXPECT_EQ(back.model, s.model);
}

}  // namespace
}  // namespace moesim
