#include "oracle.hpp"

#include <gsar/weights.hpp>

#include <gtest/gtest.h>

#include <sstream>

using gsar::SpatialWeights;

namespace {

SpatialWeights parse_edges(const std::string& text) {
  std::istringstream in(text);
  return gsar::read_weights(in, gsar::WeightsFormat::EdgeList);
}

SpatialWeights parse_gal(const std::string& text) {
  std::istringstream in(text);
  return gsar::read_weights(in, gsar::WeightsFormat::Gal);
}

}  // namespace

TEST(RookGrid, OneByTwoIsExchange) {
  const auto w = gsar::build_rook_grid(1, 2);
  EXPECT_TRUE(w.row_standardized());
  EXPECT_EQ(w.dense(), (Eigen::MatrixXd(2, 2) << 0, 1, 1, 0).finished());
}

TEST(RookGrid, TwoByTwoHasTwoHalfWeights) {
  const auto w = gsar::build_rook_grid(2, 2);
  for (Eigen::Index i = 0; i < 4; ++i) {
    int count = 0;
    for (Eigen::Index j = 0; j < 4; ++j)
      if (w(i, j) != 0.0) {
        ++count;
        EXPECT_DOUBLE_EQ(w(i, j), 0.5);
      }
    EXPECT_EQ(count, 2);
  }
}

TEST(RookGrid, ThreeByThreeNeighborCounts) {
  const auto w = gsar::build_rook_grid(3, 3);
  const int expected[] = {2, 3, 2, 3, 4, 3, 2, 3, 2};
  for (Eigen::Index i = 0; i < 9; ++i) {
    int count = 0;
    for (Eigen::Index j = 0; j < 9; ++j)
      if (w(i, j) != 0.0) {
        ++count;
        EXPECT_DOUBLE_EQ(w(i, j), 1.0 / expected[i]);
      }
    EXPECT_EQ(count, expected[i]) << "unit " << i;
  }
}

TEST(RookGrid, MatchesCoordinateOracle) {
  for (auto [r, c] : {std::pair{4, 6}, std::pair{7, 7}, std::pair{1, 5}}) {
    const auto w = gsar::build_rook_grid(r, c);
    EXPECT_LE(oracle::max_abs(w.dense() - oracle::rook_dense(r, c)), 1e-15);
  }
}

TEST(RookGrid, RejectsSingleCell) { EXPECT_THROW(gsar::build_rook_grid(1, 1), gsar::ValidationError); }

TEST(RookGrid, AdjacencyIsSymmetric) {
  for (auto [r, c] : {std::pair{3, 5}, std::pair{6, 4}, std::pair{9, 9}}) {
    const Eigen::MatrixXd a = gsar::rook_adjacency(r, c).dense();
    EXPECT_EQ(a, a.transpose());
  }
}

TEST(RowStandardize, DividesByRowSum) {
  const auto w = SpatialWeights::from_entries(3, {{1, 0, 1.0}, {1, 2, 3.0}, {0, 1, 2.0}});
  const auto s = gsar::row_standardize(w);
  EXPECT_DOUBLE_EQ(s(1, 0), 0.25);
  EXPECT_DOUBLE_EQ(s(1, 2), 0.75);
  EXPECT_DOUBLE_EQ(s(0, 1), 1.0);
  EXPECT_TRUE(s.row_standardized());
}

TEST(RowStandardize, Idempotent) {
  const auto w = gsar::build_rook_grid(5, 4);
  const auto again = gsar::row_standardize(w);
  EXPECT_LE(oracle::max_abs(again.dense() - w.dense()), 1e-15);
  EXPECT_TRUE(again.row_standardized());
}

TEST(RowStandardize, EmptyRowStaysZeroAndIsCounted) {
  const auto w = SpatialWeights::from_entries(3, {{0, 1, 2.0}, {1, 0, 1.0}});
  const auto r = gsar::row_standardize_report(w);
  EXPECT_EQ(r.empty_rows, 1);
  EXPECT_EQ(r.weights.row_sums()[2], 0.0);
}

TEST(RowStandardize, RowSumsAreNonemptyIndicator) {
  std::mt19937 eng(3);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  std::vector<SpatialWeights::Entry> entries;
  for (Eigen::Index i = 0; i < 12; ++i)
    for (Eigen::Index j = 0; j < 12; ++j)
      if (i != j && i % 4 != 3 && (i + j) % 3 == 0) entries.push_back({i, j, u(eng) + 0.01});
  const auto s = gsar::row_standardize(SpatialWeights::from_entries(12, entries));
  const Eigen::VectorXd ones = s.matrix() * Eigen::VectorXd::Ones(12);
  for (Eigen::Index i = 0; i < 12; ++i) EXPECT_NEAR(ones[i], i % 4 == 3 ? 0.0 : 1.0, 1e-12);
}

TEST(FromEntries, RejectsInvalidEntries) {
  EXPECT_THROW(SpatialWeights::from_entries(1, {}), gsar::ValidationError);
  EXPECT_THROW(SpatialWeights::from_entries(2, {{0, 0, 0.5}}), gsar::ValidationError);
  EXPECT_THROW(SpatialWeights::from_entries(2, {{0, 1, -1.0}}), gsar::ValidationError);
  EXPECT_THROW(SpatialWeights::from_entries(2, {{0, 2, 1.0}}), gsar::BoundsError);
  EXPECT_THROW(SpatialWeights::from_entries(2, {{0, 1, 1.0}, {0, 1, 2.0}}), gsar::ValidationError);
}

TEST(EdgeList, DirectTranscription) {
  const auto w = parse_edges("n=2\n1 2 1.0\n2 1 1.0\n");
  EXPECT_FALSE(w.row_standardized());
  EXPECT_EQ(w.dense(), (Eigen::MatrixXd(2, 2) << 0, 1, 1, 0).finished());
}

TEST(EdgeList, CommentsAndBlankLines) {
  const auto w = parse_edges("# header\n\nn=3  # three units\n1 2 0.5 # first\n\n3 1 2\n");
  EXPECT_EQ(w.n(), 3);
  EXPECT_EQ(w.nonzeros(), 2);
  EXPECT_DOUBLE_EQ(w(2, 0), 2.0);
}

TEST(EdgeList, DiagonalRejected) {
  EXPECT_THROW(parse_edges("n=2\n1 1 0.5\n"), gsar::ValidationError);
}

TEST(EdgeList, OutOfRangeIsBoundsError) {
  EXPECT_THROW(parse_edges("n=2\n1 3 1.0\n"), gsar::BoundsError);
  EXPECT_THROW(parse_edges("n=2\n0 1 1.0\n"), gsar::BoundsError);
}

TEST(EdgeList, NegativeWeightRejected) {
  EXPECT_THROW(parse_edges("n=2\n1 2 -0.5\n"), gsar::ValidationError);
}

TEST(EdgeList, MalformedLineCarriesLineNumber) {
  try {
    parse_edges("n=3\n1 2 1\n2 x 1\n");
    FAIL() << "expected a parse error";
  } catch (const gsar::ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  try {
    parse_edges("n=3\n1 2\n");
    FAIL() << "expected a parse error";
  } catch (const gsar::ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(parse_edges("1 2 1\n"), gsar::ParseError);
}

TEST(Gal, ThreeByThreeEqualsRookAdjacency) {
  const auto adj = gsar::rook_adjacency(3, 3);
  std::ostringstream out;
  gsar::write_weights(out, adj, gsar::WeightsFormat::Gal);
  const auto loaded = parse_gal(out.str());
  EXPECT_EQ(loaded, adj);
  EXPECT_EQ(gsar::row_standardize(loaded).dense(), gsar::build_rook_grid(3, 3).dense());
}

TEST(Gal, HandWrittenFile) {
  const auto w = parse_gal("3\n1 2\n2 3\n2 1\n1\n3 1\n1\n");
  EXPECT_EQ(w(0, 1), 1.0);
  EXPECT_EQ(w(0, 2), 1.0);
  EXPECT_EQ(w(1, 0), 1.0);
  EXPECT_EQ(w(2, 0), 1.0);
  EXPECT_EQ(w.nonzeros(), 4);
}

TEST(Gal, WrongNeighborCountIsParseError) {
  EXPECT_THROW(parse_gal("2\n1 2\n2\n2 1\n1\n"), gsar::ParseError);
}

TEST(RoundTrip, EdgeListIsExact) {
  std::mt19937 eng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<SpatialWeights::Entry> entries;
  for (Eigen::Index i = 0; i < 20; ++i)
    for (Eigen::Index j = 0; j < 20; ++j)
      if (i != j && u(eng) < 0.2) entries.push_back({i, j, u(eng) / 3.0});
  for (const auto& w : {SpatialWeights::from_entries(20, entries),
                        gsar::row_standardize(SpatialWeights::from_entries(20, entries)),
                        gsar::build_rook_grid(6, 7)}) {
    std::ostringstream out;
    gsar::write_weights(out, w, gsar::WeightsFormat::EdgeList);
    const auto back = parse_edges(out.str());
    EXPECT_EQ(back.entries().size(), w.entries().size());
    EXPECT_EQ(back.dense(), w.dense());
  }
}

TEST(RoundTrip, GalIsExactForBinaryWeights) {
  const auto adj = gsar::rook_adjacency(8, 5);
  std::ostringstream out;
  gsar::write_weights(out, adj, gsar::WeightsFormat::Gal);
  EXPECT_EQ(parse_gal(out.str()), adj);
}

TEST(Load, MissingFileIsError) {
  EXPECT_THROW(gsar::load_weights("/nonexistent/w.txt", gsar::WeightsFormat::EdgeList), gsar::Error);
}

TEST(Format, ParsesNames) {
  EXPECT_EQ(gsar::parse_weights_format("edge-list"), gsar::WeightsFormat::EdgeList);
  EXPECT_EQ(gsar::parse_weights_format("gal"), gsar::WeightsFormat::Gal);
  EXPECT_THROW(gsar::parse_weights_format("csv"), gsar::ValidationError);
}
