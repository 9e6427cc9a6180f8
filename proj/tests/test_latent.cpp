#include <doctest.h>

#include "textdiff/latent.hpp"
#include "textdiff/rng.hpp"

#include <limits>

using namespace textdiff;

namespace {

// Table with K = 5 ids: 0..2 reserved at far away points, e1 = (1,0) at id 3, e2 = (0,1) at id 4.
EmbeddingTable unit_table() {
    EmbeddingTable t(5, 2);
    t.rows() << 10, 10, -10, 10, 10, -10, 1, 0, 0, 1;
    t.absorbing() << 0.5, 0.5;
    return t;
}

Mat rows_of(std::initializer_list<std::initializer_list<double>> rows) {
    Mat m(rows.size(), rows.begin()->size());
    int i = 0;
    for (auto r : rows) {
        int j = 0;
        for (double v : r) m(i, j++) = v;
        ++i;
    }
    return m;
}

}  // namespace

TEST_CASE("embedding init is deterministic") {
    Rng a(5), b(5);
    EmbeddingTable ta(10, 4, a), tb(10, 4, b);
    CHECK(ta.rows() == tb.rows());
    CHECK(ta.absorbing() == tb.absorbing());
    CHECK(ta.params().size() == 44);
    CHECK_THROWS(EmbeddingTable(3, 4));
}

TEST_CASE("embed looks up rows") {
    auto t = unit_table();
    std::vector<TokenId> ids{3, 4, 3};
    Mat e = embed(t, ids);
    CHECK(e.rows() == 3);
    CHECK(e(0, 0) == 1.0);
    CHECK(e(1, 1) == 1.0);
    std::vector<TokenId> bad{5};
    CHECK_THROWS(embed(t, bad));
    std::vector<TokenId> neg{-1};
    CHECK_THROWS(embed(t, neg));
}

TEST_CASE("rounding picks the nearest row") {
    auto t = unit_table();
    CHECK(round_to_tokens(t, rows_of({{0.9, 0.2}}))[0] == 3);
    CHECK(round_to_tokens(t, rows_of({{0.0, 1.0}}))[0] == 4);
    // equidistant from e1 and e2
    CHECK(round_to_tokens(t, rows_of({{0.5, 0.5}}))[0] == 3);
    // m itself is never a candidate
    CHECK(round_to_tokens(t, t.absorbing())[0] == 3);
    CHECK(round_to_tokens(t, rows_of({{0.9, 0.2}}), RoundingMetric::dot)[0] == 0);  // largest inner product

    Mat nan = rows_of({{std::numeric_limits<double>::quiet_NaN(), 0.0}});
    CHECK_THROWS(round_to_tokens(t, nan));
    CHECK_THROWS(round_to_tokens(t, rows_of({{1.0, 0.0, 0.0}})));
}

TEST_CASE("clamp snaps masked rows only") {
    auto t = unit_table();
    Mat z = rows_of({{0.9, 0.2}, {0.1, 0.7}});
    Mask none{0, 0}, all{1, 1}, second{0, 1};
    CHECK(clamp_latent(t, z, none) == z);
    Mat c = clamp_latent(t, z, second);
    CHECK(c.row(0) == z.row(0));
    CHECK(c(1, 0) == 0.0);
    CHECK(c(1, 1) == 1.0);
    Mat lattice = rows_of({{1, 0}, {0, 1}});
    CHECK(clamp_latent(t, lattice, all) == lattice);
    Mask short_mask{1};
    CHECK_THROWS(clamp_latent(t, z, short_mask));
}

TEST_CASE("rounding logits") {
    Rng rng(2);
    EmbeddingTable t(8, 3, rng, 1.0);
    std::vector<TokenId> ids{4, 7, 3};
    Mat z = embed(t, ids);
    Mat s = rounding_logits(t, z);
    REQUIRE(s.rows() == 3);
    REQUIRE(s.cols() == 8);
    for (int i = 0; i < 3; ++i) {
        Eigen::Index best;
        s.row(i).maxCoeff(&best);
        CHECK(best == ids[i]);
        CHECK(s(i, ids[i]) == doctest::Approx(0.0));
        for (int k = 0; k < 8; ++k)
            CHECK(s(i, k) == doctest::Approx(-(z.row(i) - t.rows().row(k)).squaredNorm()).epsilon(1e-12));
    }
}
