#pragma once

#include "textdiff/types.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace textdiff {

using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

// Flat parameter storage with named 2-D blocks. Values and gradients share the
// same layout so optimizers and checkpoints can treat everything as one span.
class Parameters {
public:
    struct Block {
        std::string name;
        std::size_t offset;
        int rows;
        int cols;
        std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
    };

    // Returns the block index. Blocks are zero-initialized.
    int add(const std::string& name, int rows, int cols);

    MatMap value(int block);
    ConstMatMap value(int block) const;
    MatMap grad(int block);
    ConstMatMap grad(int block) const;

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::span<double> grads() { return grads_; }
    std::span<const double> grads() const { return grads_; }
    std::size_t size() const { return values_.size(); }

    const std::vector<Block>& blocks() const { return blocks_; }
    int find(const std::string& name) const;  // -1 when absent

    void zero_grad();

private:
    std::vector<Block> blocks_;
    std::vector<double> values_;
    std::vector<double> grads_;
};

}  // namespace textdiff
