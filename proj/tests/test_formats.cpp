#include <gtest/gtest.h>

#include <functional>

#include "test_support.hpp"

using namespace mbu;
using namespace mbu::test;

namespace {

// Returns (kind, message) of the Error raised by f.
std::pair<ErrorKind, std::string> error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return {e.kind(), e.what()};
  }
  ADD_FAILURE() << "no error raised";
  return {ErrorKind::Io, ""};
}

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

CompiledModel small_model(int id, std::uint64_t seed) {
  auto c = UNetConfig::scaled(8, 32);
  c.precision = PrecisionMap::from_id(id);
  return build(c, synthesize_bundle(c, seed));
}

// 4 magic + 4 version + config block; the first step's kind byte follows
// the step count and its length-prefixed name.
constexpr std::size_t kConfigStart = 8;
constexpr std::size_t kConfigBytes = 19 * 4 + 2 + 3;

}  // namespace

TEST(ModelFile, RoundTripIsIdentical) {
  for (int id : {0, 0x0F0, 0xFFF, 1234}) {
    const auto m = small_model(id, static_cast<std::uint64_t>(id) + 1);
    const auto bytes = serialize_model(m);
    const auto back = deserialize_model(bytes);
    EXPECT_EQ(back, m);
    EXPECT_EQ(serialize_model(back), bytes);
    const auto img = random_image(m.config, 3);
    EXPECT_EQ(forward(back, img).logits, forward(m, img).logits);
  }
}

TEST(ModelFile, DiskRoundTrip) {
  const auto m = small_model(77, 5);
  const auto path = (scratch_dir("model_file") / "m.mbun").string();
  write_model(path, m);
  EXPECT_EQ(read_model(path), m);
  EXPECT_EQ(error_of([] { read_model("/nonexistent/m.mbun"); }).first, ErrorKind::Io);
}

TEST(ModelFile, HeaderErrorsCarryOffsets) {
  const auto good = serialize_model(small_model(3, 1));

  auto bad = good;
  bad[0] = 'X';
  auto [kind, msg] = error_of([&] { deserialize_model(bad); });
  EXPECT_EQ(kind, ErrorKind::Parse);
  EXPECT_NE(msg.find("byte 0"), std::string::npos) << msg;

  bad = good;
  bad[4] = 2;
  EXPECT_NE(error_of([&] { deserialize_model(bad); }).second.find("unsupported version"), std::string::npos);

  bad = good;
  bad[kConfigStart + 76 + 1] |= 0x10;
  msg = error_of([&] { deserialize_model(bad); }).second;
  EXPECT_NE(msg.find("byte " + std::to_string(kConfigStart + 76)), std::string::npos) << msg;
  EXPECT_NE(msg.find("reserved high bits"), std::string::npos);

  bad = good;
  bad[kConfigStart + kConfigBytes - 1] = 0;
  EXPECT_NE(error_of([&] { deserialize_model(bad); }).second.find("sign-zero"), std::string::npos);
}

TEST(ModelFile, UnknownKindRejected) {
  auto bytes = serialize_model(small_model(3, 1));
  const std::size_t kind_at = kConfigStart + kConfigBytes + 4 + 4 + 4;  // count, name length, "stem"
  ASSERT_EQ(bytes[kind_at], 0);
  bytes[kind_at] = 9;
  const auto [kind, msg] = error_of([&] { deserialize_model(bytes); });
  EXPECT_EQ(kind, ErrorKind::Parse);
  EXPECT_NE(msg.find("byte " + std::to_string(kind_at)), std::string::npos) << msg;
  EXPECT_NE(msg.find("unknown layer kind code 9"), std::string::npos) << msg;
}

TEST(ModelFile, TruncatedAndTrailing) {
  const auto good = serialize_model(small_model(5, 2));
  for (std::size_t cut : {good.size() - 1, good.size() / 2, std::size_t{10}}) {
    std::vector<std::uint8_t> t(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_EQ(error_of([&] { deserialize_model(t); }).first, ErrorKind::Parse) << cut;
  }
  auto extra = good;
  extra.push_back(0);
  EXPECT_NE(error_of([&] { deserialize_model(extra); }).second.find("trailing bytes"), std::string::npos);
}

TEST(ModelFile, OverlappingPlanesRejected) {
  auto m = small_model(0xFFF, 3);
  auto& s = m.steps[1];
  ASSERT_TRUE(s.weights.masked());
  s.weights.pos.set(0, 0, true);
  s.weights.neg->set(0, 0, true);
  const auto [kind, msg] = error_of([&] { deserialize_model(serialize_model(m)); });
  EXPECT_EQ(kind, ErrorKind::Invariant);
  EXPECT_NE(msg.find(s.name), std::string::npos);
}

TEST(ModelFile, PadLaneBitRejected) {
  auto m = small_model(0xFFF, 4);
  auto& s = m.steps[1];
  ASSERT_LT(s.spec.c_in, 128);
  s.weights.pos.set(0, 127, true);
  EXPECT_EQ(error_of([&] { deserialize_model(serialize_model(m)); }).first, ErrorKind::Invariant);
}

TEST(TensorFile, RoundTripAllDtypes) {
  std::mt19937_64 rng(1);
  FloatTensor f(1, 3, 5, 2);
  for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = 0.125 * static_cast<double>(i) - 1.0;
  EXPECT_EQ(to_float_tensor(deserialize_tensor(serialize_tensor(to_raw(f)))), f);
  EXPECT_EQ(to_float_tensor(deserialize_tensor(serialize_tensor(to_raw(f, DType::F32)))), f);

  IntTensor it(2, 2, 2, 3);
  for (std::size_t i = 0; i < it.data.size(); ++i) it.data[i] = static_cast<std::int32_t>(i * 1000) - 7000;
  const auto raw = deserialize_tensor(serialize_tensor(to_raw(it)));
  EXPECT_EQ(raw.dtype, DType::I32);
  EXPECT_EQ(raw.ints, it.data);

  for (int c : {1, 70, 128, 200}) {
    const auto b = random_bits(2, 3, 2, ChannelLayout::dense(c), rng);
    const auto bytes = serialize_tensor(to_raw(b));
    EXPECT_EQ(bytes.size(), 13 + 16 + 2 * 3 * 2 * static_cast<std::size_t>((c + 127) / 128) * 16);
    EXPECT_EQ(to_bit_tensor(deserialize_tensor(bytes)), b);
  }
}

TEST(TensorFile, DiskRoundTrip) {
  FloatTensor f(1, 2, 2, 1);
  f.data = {0.0, 1.0, -2.5, 3.25};
  const auto path = (scratch_dir("tensor_file") / "t.rten").string();
  write_tensor(path, to_raw(f));
  EXPECT_EQ(to_float_tensor(read_tensor(path)), f);
}

TEST(TensorFile, Errors) {
  FloatTensor f(1, 2, 2, 1);
  const auto good = serialize_tensor(to_raw(f));

  auto bad = good;
  bad[1] = 'X';
  auto [kind, msg] = error_of([&] { deserialize_tensor(bad); });
  EXPECT_EQ(kind, ErrorKind::Parse);
  EXPECT_NE(msg.find("byte 0"), std::string::npos);

  bad = good;
  bad[8] = 7;
  msg = error_of([&] { deserialize_tensor(bad); }).second;
  EXPECT_NE(msg.find("byte 8"), std::string::npos) << msg;

  bad = good;
  bad.pop_back();
  EXPECT_NE(error_of([&] { deserialize_tensor(bad); }).second.find("header implies"), std::string::npos);
  bad = good;
  bad.push_back(0);
  EXPECT_EQ(error_of([&] { deserialize_tensor(bad); }).first, ErrorKind::Parse);

  RawTensor bits3;
  bits3.dtype = DType::Bits;
  bits3.extents = {1, 1, 1};
  EXPECT_THROW(serialize_tensor(bits3), Error);

  BitTensor b(1, 1, 1, 3);
  auto raw = to_raw(b);
  raw.bits[0] |= 1ULL << 10;
  EXPECT_EQ(error_of([&] { to_bit_tensor(raw); }).first, ErrorKind::Invariant);

  EXPECT_EQ(error_of([&] { to_raw(concat_channels(b, b)); }).first, ErrorKind::Layout);
}

TEST(Image, DecodeP5WithComment) {
  std::string s = "P5\n# a comment\n3 2\n255\n";
  s += std::string{'\x00', '\x7f', '\xff', '\x33', '\x66', '\x99'};
  const auto img = decode_pnm(bytes_of(s));
  ASSERT_EQ(img.h, 2);
  ASSERT_EQ(img.w, 3);
  ASSERT_EQ(img.c, 1);
  EXPECT_EQ(img.data[0], 0.0);
  EXPECT_EQ(img.data[1], 127.0 / 255.0);
  EXPECT_EQ(img.data[2], 1.0);
  EXPECT_EQ(img.data[5], 153.0 / 255.0);
}

TEST(Image, DecodeP6And16Bit) {
  std::string s = "P6 1 1 255\n";
  s += std::string{'\x10', '\x20', '\x30'};
  const auto rgb = decode_pnm(bytes_of(s));
  ASSERT_EQ(rgb.c, 3);
  EXPECT_EQ(rgb.data[2], 48.0 / 255.0);

  std::string w = "P5 2 1 65535\n";
  w += std::string{'\x01', '\x00', '\xff', '\xff'};
  const auto wide = decode_pnm(bytes_of(w));
  EXPECT_EQ(wide.data[0], 256.0 / 65535.0);
  EXPECT_EQ(wide.data[1], 1.0);
}

TEST(Image, Errors) {
  auto [kind, msg] = error_of([] { decode_pnm(bytes_of("P2 1 1 255\n0")); });
  EXPECT_EQ(kind, ErrorKind::Parse);
  EXPECT_NE(msg.find("byte 0"), std::string::npos);
  EXPECT_NE(error_of([] { decode_pnm(bytes_of("P5 4 4 255\nabc")); }).second.find("truncated"), std::string::npos);
  EXPECT_NE(error_of([] { decode_pnm(bytes_of("P5 1 1 0\n\x01")); }).second.find("maxval"), std::string::npos);
  EXPECT_NE(error_of([] { decode_pnm(bytes_of("P5 x 1 255\n\x01")); }).second.find("byte 3"), std::string::npos);
  EXPECT_EQ(error_of([] { read_image("/nonexistent.pgm"); }).first, ErrorKind::Io);
}

TEST(Image, MaskRoundTrip) {
  const std::vector<std::uint8_t> mask{1, 0, 0, 1, 1, 1};
  const auto bytes = encode_mask(mask, 2, 3);
  const auto img = decode_pnm(bytes);
  for (std::size_t i = 0; i < mask.size(); ++i) EXPECT_EQ(img.data[i], mask[i] ? 1.0 : 0.0);
  EXPECT_THROW(encode_mask(mask, 2, 2), Error);
}

TEST(Config, ParseExample) {
  const auto c = parse_config(
      "# small model\n"
      "base = 16\n"
      "extent = 64   # square\n"
      "masked = up-CT1, up-CT2,UP-ct3\n"
      "stem2 = binary\n",
      "small.cfg");
  EXPECT_EQ(c.encoder[0], 16);
  EXPECT_EQ(c.height, 64);
  EXPECT_EQ(c.width, 64);
  EXPECT_EQ(c.precision.id(), 0x070);
  EXPECT_EQ(c.stem2, LayerState::Binary);
  EXPECT_EQ(parse_config("masked = all\n", "x").precision.id(), 4095);
  EXPECT_EQ(parse_config("", "x"), UNetConfig{});
}

TEST(Config, FormatRoundTrip) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    auto c = UNetConfig::scaled(static_cast<int>(rng() % 64) + 1, 16 * static_cast<int>(rng() % 8 + 1));
    c.precision = PrecisionMap::from_id(static_cast<int>(rng() % 4096));
    c.stem2 = rng() % 2 ? LayerState::Masked : LayerState::Binary;
    c.binary_padding = rng() % 2 ? BinaryPadding::Reject : BinaryPadding::MinusOne;
    c.in_channels = static_cast<int>(rng() % 4) + 1;
    EXPECT_EQ(parse_config(format_config(c), "rt"), c);
  }
}

TEST(Config, Errors) {
  const std::vector<std::pair<std::string, std::string>> cases = {
      {"height 64\n", "c:1: expected 'key = value'"},
      {"\n\nwidth = 64\nwidth = 32\n", "c:4: duplicate key 'width'"},
      {"colour = red\n", "c:1: unknown key 'colour'"},
      {"encoder = 1,2,3\n", "expected 4 comma-separated widths"},
      {"height = -16\n", "non-negative integer"},
      {"config_id = 5000\n", "outside 0..4095"},
      {"masked = up-CT9\n", "unknown configurable layer 'up-CT9'"},
      {"masked = stem\n", "unknown configurable layer"},
      {"config_id = 3\nmasked = none\n", "c:2: 'masked' and 'config_id' are mutually exclusive"},
      {"stem2 = ternary\n", "stem2 must be"},
      {"binary_padding = zero\n", "binary_padding must be"},
  };
  for (const auto& [text, expect] : cases) {
    const auto [kind, msg] = error_of([&] { parse_config(text, "c"); });
    EXPECT_EQ(kind, ErrorKind::Parse) << text;
    EXPECT_NE(msg.find(expect), std::string::npos) << text << " -> " << msg;
  }
  const auto [kind, msg] = error_of([] { parse_config("extent = 100\n", "c"); });
  EXPECT_EQ(kind, ErrorKind::InvalidInput);
  EXPECT_NE(msg.find("divisible by 16"), std::string::npos);
  EXPECT_EQ(error_of([] { read_config("/nonexistent.cfg"); }).first, ErrorKind::Io);
}
