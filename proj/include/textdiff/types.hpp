#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace textdiff {

// One sequence of latents, row i = position i.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Mask = std::vector<std::uint8_t>;

// Per-position masks shared by every stage that touches a packed sequence.
struct SequenceMasks {
    Mask condition;  // x and [SEP]; never noised
    Mask valid;      // participates in attention and losses

    std::size_t size() const { return valid.size(); }
    bool is_target(std::size_t i) const { return valid[i] && !condition[i]; }
};

}  // namespace textdiff
