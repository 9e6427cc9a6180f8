#include "textdiff/params.hpp"

#include <algorithm>
#include <stdexcept>

namespace textdiff {

int Parameters::add(const std::string& name, int rows, int cols) {
    if (rows < 1 || cols < 1) throw std::invalid_argument("parameters: empty block " + name);
    if (find(name) >= 0) throw std::invalid_argument("parameters: duplicate block " + name);
    Block b{name, values_.size(), rows, cols};
    values_.resize(values_.size() + b.size(), 0.0);
    grads_.resize(values_.size(), 0.0);
    blocks_.push_back(std::move(b));
    return static_cast<int>(blocks_.size()) - 1;
}

MatMap Parameters::value(int block) {
    const auto& b = blocks_.at(block);
    return MatMap(values_.data() + b.offset, b.rows, b.cols);
}

ConstMatMap Parameters::value(int block) const {
    const auto& b = blocks_.at(block);
    return ConstMatMap(values_.data() + b.offset, b.rows, b.cols);
}

MatMap Parameters::grad(int block) {
    const auto& b = blocks_.at(block);
    return MatMap(grads_.data() + b.offset, b.rows, b.cols);
}

ConstMatMap Parameters::grad(int block) const {
    const auto& b = blocks_.at(block);
    return ConstMatMap(grads_.data() + b.offset, b.rows, b.cols);
}

int Parameters::find(const std::string& name) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        if (blocks_[i].name == name) return static_cast<int>(i);
    return -1;
}

void Parameters::zero_grad() { std::fill(grads_.begin(), grads_.end(), 0.0); }

}  // namespace textdiff
