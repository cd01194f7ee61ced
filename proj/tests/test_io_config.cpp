#include <random>

#include <gtest/gtest.h>

#include "decouple4d/config.hpp"
#include "decouple4d/io.hpp"
#include "decouple4d/pipeline.hpp"
#include "test_support.hpp"

using namespace decouple4d;
using testing_support::fresh_dir;
using testing_support::random_pose;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no decouple4d::Error thrown";
  return ErrorCode::Stage;
}

DenseMap ramp(int h, int w, MapRole role, double offset) {
  DenseMap m(h, w, role);
  for (std::size_t i = 0; i < m.size(); ++i) m.values[i] = offset + 0.25 * static_cast<double>(i);
  return m;
}

}  // namespace

TEST(Dtm, HeaderLayout) {
  DenseMap m = ramp(3, 5, MapRole::depth, 1.0);
  const std::string bytes = encode_dtm({&m});
  ASSERT_EQ(bytes.size(), kDtmHeaderSize + 15 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "DTM1");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  EXPECT_EQ(p[4], 3);
  EXPECT_EQ(p[8], 5);
  EXPECT_EQ(p[12], 1);
  for (int i = 16; i < 20; ++i) EXPECT_EQ(p[i], 0) << i;
  // first payload value is 1.0f, little-endian
  EXPECT_EQ(p[20], 0x00);
  EXPECT_EQ(p[23], 0x3F);
  EXPECT_EQ(p[22], 0x80);
}

TEST(Dtm, RoundTripIsExactForFloatValues) {
  DenseMap d = ramp(4, 6, MapRole::depth, 2.0);
  DenseMap c = ramp(4, 6, MapRole::confidence, -1.0);
  d.values[5] = 0.0;
  const auto maps = decode_dtm(encode_dtm({&d, &c}), {MapRole::depth, MapRole::confidence});
  ASSERT_EQ(maps.size(), 2u);
  EXPECT_EQ(maps[0].values, d.values);
  EXPECT_EQ(maps[1].values, c.values);
  EXPECT_EQ(maps[0].role, MapRole::depth);
  EXPECT_FALSE(maps[0].defined(5));
}

TEST(Dtm, ChannelsAreInterleaved) {
  DenseMap a(1, 2, MapRole::depth);
  DenseMap b(1, 2, MapRole::mask);
  a.values = {1.0, 2.0};
  b.values = {0.0, 1.0};
  const std::string bytes = encode_dtm({&a, &b});
  const auto* q = reinterpret_cast<const unsigned char*>(bytes.data()) + kDtmHeaderSize;
  float f[4];
  std::memcpy(f, q, 16);
  EXPECT_EQ(f[0], 1.0f);
  EXPECT_EQ(f[1], 0.0f);
  EXPECT_EQ(f[2], 2.0f);
  EXPECT_EQ(f[3], 1.0f);
}

TEST(Dtm, QuantizesToFloat) {
  DenseMap m(1, 1, MapRole::depth);
  m.values[0] = 0.1;
  const auto back = decode_dtm(encode_dtm({&m}), {MapRole::depth});
  EXPECT_EQ(back[0].values[0], static_cast<double>(0.1f));
}

TEST(Dtm, RejectsMalformedInput) {
  DenseMap m = ramp(2, 2, MapRole::depth, 1.0);
  const std::string good = encode_dtm({&m});
  EXPECT_EQ(code_of([&] { decode_dtm("DTM", {MapRole::depth}); }), ErrorCode::Format);
  std::string bad = good;
  bad[3] = '2';
  EXPECT_EQ(code_of([&] { decode_dtm(bad, {MapRole::depth}); }), ErrorCode::Format);
  bad = good;
  bad[16] = 1;
  EXPECT_EQ(code_of([&] { decode_dtm(bad, {MapRole::depth}); }), ErrorCode::Format);
  EXPECT_EQ(code_of([&] { decode_dtm(good.substr(0, good.size() - 1), {MapRole::depth}); }), ErrorCode::Format);
  EXPECT_EQ(code_of([&] { decode_dtm(good + "x", {MapRole::depth}); }), ErrorCode::Format);
  EXPECT_EQ(code_of([&] { decode_dtm(good, {MapRole::depth, MapRole::mask}); }), ErrorCode::Format);
  bad = good;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bad.data() + kDtmHeaderSize, &nan, 4);
  EXPECT_EQ(code_of([&] { decode_dtm(bad, {MapRole::depth}); }), ErrorCode::Format);
}

TEST(Dtm, RejectsNanAndShapeMismatchOnWrite) {
  DenseMap m(2, 2, MapRole::depth);
  m.values[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(code_of([&] { encode_dtm({&m}); }), ErrorCode::Format);
  DenseMap a(2, 2, MapRole::depth);
  DenseMap b(2, 3, MapRole::depth);
  EXPECT_THROW(encode_dtm({&a, &b}), Error);
  EXPECT_EQ(code_of([&] { encode_dtm({}); }), ErrorCode::Format);
}

TEST(Dtm, FileRoundTrip) {
  const auto dir = fresh_dir("dtm");
  DenseMap m = ramp(5, 7, MapRole::saliency, 0.0);
  write_dtm(dir / "sub" / "m.dtm", m);
  const DenseMap back = read_dtm(dir / "sub" / "m.dtm", MapRole::saliency);
  EXPECT_EQ(back.height, 5);
  EXPECT_EQ(back.width, 7);
  EXPECT_EQ(back.values, m.values);
  EXPECT_EQ(code_of([&] { read_dtm(dir / "missing.dtm", MapRole::depth); }), ErrorCode::Io);
}

TEST(Trajectory, RoundTripPreservesPoses) {
  std::mt19937_64 rng(5);
  Trajectory traj;
  for (int i = 0; i < 10; ++i) {
    CameraPose p = random_pose(rng);
    p.frame_id = i * 2;
    traj.push_back(p);
  }
  const Trajectory back = parse_trajectory(format_trajectory(traj, "test run"));
  ASSERT_EQ(back.size(), traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    EXPECT_EQ(back[i].frame_id, traj[i].frame_id);
    EXPECT_LT((back[i].translation - traj[i].translation).norm(), 1e-15);
    EXPECT_LT((back[i].rotation - traj[i].rotation).norm(), 1e-12);
  }
}

TEST(Trajectory, WrittenTextReadsBackAsRoundTrip) {
  std::mt19937_64 rng(6);
  Trajectory traj;
  for (int i = 0; i < 4; ++i) {
    CameraPose p = random_pose(rng);
    p.frame_id = i;
    traj.push_back(p);
  }
  const auto dir = fresh_dir("traj");
  write_trajectory(dir / "t.txt", traj, "c");
  const Trajectory read = read_trajectory(dir / "t.txt");
  const Trajectory once = roundtrip_trajectory(traj);
  ASSERT_EQ(read.size(), once.size());
  for (std::size_t i = 0; i < read.size(); ++i) {
    EXPECT_EQ(read[i].rotation, once[i].rotation);
    EXPECT_EQ(read[i].translation, once[i].translation);
  }
  // once read back, further write/read cycles are lossless
  const Trajectory twice = roundtrip_trajectory(once);
  for (std::size_t i = 0; i < once.size(); ++i) {
    EXPECT_EQ(twice[i].rotation, once[i].rotation);
    EXPECT_EQ(twice[i].translation, once[i].translation);
  }
}

TEST(TrajectoryProperty, ReadBackPosesAreWriteReadFixedPoints) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 2000; ++trial) {
    CameraPose p = random_pose(rng);
    p.frame_id = trial;
    const Trajectory once = roundtrip_trajectory({p});
    const Trajectory twice = roundtrip_trajectory(once);
    ASSERT_EQ(twice[0].rotation, once[0].rotation) << trial;
  }
}

TEST(Trajectory, ParsesCommentsAndNormalizesQuaternion) {
  const Trajectory t = parse_trajectory("# header\n\n3 1 2 3 0 0 0 2\n");
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].frame_id, 3);
  EXPECT_EQ(t[0].translation, Vector3d(1, 2, 3));
  EXPECT_LT((t[0].rotation - Matrix3d::Identity()).norm(), 1e-15);
}

TEST(Trajectory, RejectsBadLines) {
  EXPECT_EQ(code_of([] { parse_trajectory("0 1 2 3 0 0 0\n"); }), ErrorCode::Format);
  EXPECT_EQ(code_of([] { parse_trajectory("0 1 2 3 0 0 0 1 9\n"); }), ErrorCode::Format);
  EXPECT_EQ(code_of([] { parse_trajectory("0 1 2 3 0 0 0 0\n"); }), ErrorCode::Format);
  EXPECT_EQ(code_of([] { parse_trajectory("1 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n"); }), ErrorCode::Format);
}

TEST(Ply, RoundTripAtFloatPrecision) {
  PointCloud c;
  c.points = {Vector3d(0.1, -2.5, 3.0), Vector3d(1e-3, 4.25, -7.125)};
  const PointCloud back = parse_ply(format_ply(c));
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    for (int k = 0; k < 3; ++k) EXPECT_EQ(back.points[i][k], static_cast<double>(static_cast<float>(c.points[i][k])));
  }
  EXPECT_EQ(parse_ply(format_ply(PointCloud{})).size(), 0u);
}

TEST(Ply, RejectsMalformedInput) {
  EXPECT_EQ(code_of([] { parse_ply("plx\n"); }), ErrorCode::Format);
  EXPECT_EQ(code_of([] { parse_ply("ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n"); }),
            ErrorCode::Format);
  EXPECT_EQ(code_of([] { parse_ply("ply\nformat ascii 1.0\nelement vertex 2\nend_header\n1 2 3\n"); }),
            ErrorCode::Format);
}

TEST(FrameName, ZeroPadded) {
  EXPECT_EQ(frame_name("depth", 3), "depth_0003.dtm");
  EXPECT_EQ(frame_name("mask", 12345), "mask_12345.dtm");
}

TEST(Config, ParseSkipsCommentsAndTrims) {
  const ConfigMap m = parse_config("# c\n\n  a = 1 \nb=x=y\na=2\n");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.at("a"), "2");
  EXPECT_EQ(m.at("b"), "x=y");
}

TEST(Config, FormatRoundTrip) {
  const ConfigMap m{{"seed", "7"}, {"tau", "0.5"}, {"name", "abc"}};
  EXPECT_EQ(parse_config(format_config(m)), m);
}

TEST(Config, RejectsMalformedLines) {
  EXPECT_EQ(code_of([] { parse_config("novalue\n"); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { parse_config(" = 3\n"); }), ErrorCode::InvalidConfig);
}

TEST(Config, TypedParsers) {
  EXPECT_EQ(parse_double("k", "0.25"), 0.25);
  EXPECT_EQ(parse_double("k", "-1e-3"), -1e-3);
  EXPECT_EQ(parse_int("k", "-42"), -42);
  EXPECT_EQ(parse_u64("k", "18446744073709551615"), 18446744073709551615ull);
  EXPECT_TRUE(parse_bool("k", "yes"));
  EXPECT_FALSE(parse_bool("k", "0"));
  EXPECT_EQ(code_of([] { parse_double("k", "1.5x"); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { parse_double("k", ""); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { parse_int("k", "3.0"); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { parse_u64("k", "-1"); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { parse_bool("k", "maybe"); }), ErrorCode::InvalidConfig);
}

TEST(Config, SplitDropsEmptyFields) {
  EXPECT_EQ(split(" a, b ,,c ", ','), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_TRUE(split("", ',').empty());
}

TEST(Config, FormatDoubleRoundTrips) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 200; ++i) {
    const double v = u(rng) * std::pow(10.0, static_cast<int>(i % 20) - 10);
    EXPECT_EQ(parse_double("k", format_double(v)), v);
  }
}

TEST(Variants, DefaultNamesAndComposites) {
  const auto defaults = default_variants();
  ASSERT_EQ(defaults.size(), 4u);
  for (const Variant& v : defaults) EXPECT_EQ(variant_from_name(v.name).fusion, v.fusion);
  const Variant v = variant_from_name("pass2_only/unmasked");
  EXPECT_EQ(v.fusion, FusionVariant::pass2_only);
  EXPECT_EQ(v.pose, PoseMode::unmasked);
  EXPECT_EQ(variant_from_name("confidence_fused/masked").pose, PoseMode::masked);
  EXPECT_EQ(code_of([] { variant_from_name("pass2_only"); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { variant_from_name("pass2_only/sideways"); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { variant_from_name("nope/masked"); }), ErrorCode::InvalidConfig);
}
