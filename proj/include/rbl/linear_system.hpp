#pragma once

#include <Eigen/Core>
#include <string>
#include <utility>
#include <vector>

#include "rbl/errors.hpp"

namespace rbl {

/// One group of unknowns sharing a prior, with its channel matrix.
struct Block {
  std::string label;
  Eigen::MatrixXd channel;  // M x K_b
};

/// y = sum_b H_b x_b + noise, with per-row composite noise powers n0.
struct LinearSystem {
  Eigen::VectorXd y;
  std::vector<Block> blocks;
  Eigen::VectorXd n0;

  Eigen::Index rows() const { return y.size(); }

  Eigen::Index unknowns() const {
    Eigen::Index k = 0;
    for (const auto& b : blocks) k += b.channel.cols();
    return k;
  }

  /// Column offset of block b inside stacked().
  Eigen::Index offset(std::size_t b) const {
    Eigen::Index k = 0;
    for (std::size_t i = 0; i < b; ++i) k += blocks[i].channel.cols();
    return k;
  }

  /// [H_1, H_2, ...], M x unknowns().
  Eigen::MatrixXd stacked() const {
    Eigen::MatrixXd h(rows(), unknowns());
    Eigen::Index k = 0;
    for (const auto& b : blocks) {
      h.middleCols(k, b.channel.cols()) = b.channel;
      k += b.channel.cols();
    }
    return h;
  }

  void validate() const {
    if (blocks.empty()) throw InvalidArgument("linear system has no blocks");
    if (n0.size() != rows()) throw InvalidArgument("n0 size does not match observation count");
    for (const auto& b : blocks) {
      if (b.channel.rows() != rows())
        throw InvalidArgument("block '" + b.label + "' row count does not match observations");
      if (b.channel.cols() < 1) throw InvalidArgument("block '" + b.label + "' has no columns");
    }
    if ((n0.array() <= 0.0).any()) throw InvalidArgument("n0 entries must be positive");
  }
};

/// Concatenates the rows of systems with identical block layout.
inline LinearSystem stack_rows(const std::vector<LinearSystem>& parts) {
  if (parts.empty()) throw InvalidArgument("nothing to stack");
  LinearSystem out;
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.blocks.size() != parts.front().blocks.size())
      throw InvalidArgument("stacked systems have different block layouts");
    total += p.rows();
  }
  out.y.resize(total);
  out.n0.resize(total);
  for (std::size_t b = 0; b < parts.front().blocks.size(); ++b) {
    out.blocks.push_back({parts.front().blocks[b].label,
                          Eigen::MatrixXd(total, parts.front().blocks[b].channel.cols())});
  }
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.y.segment(r, p.rows()) = p.y;
    out.n0.segment(r, p.rows()) = p.n0;
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
      if (p.blocks[b].channel.cols() != out.blocks[b].channel.cols())
        throw InvalidArgument("stacked systems have different block widths");
      out.blocks[b].channel.middleRows(r, p.rows()) = p.blocks[b].channel;
    }
    r += p.rows();
  }
  return out;
}

/// Drops every block except `keep`, with y replaced by y_minus.
inline LinearSystem single_block(const LinearSystem& sys, std::size_t keep, Eigen::VectorXd y_minus) {
  LinearSystem out;
  out.y = std::move(y_minus);
  out.blocks.push_back(sys.blocks.at(keep));
  out.n0 = sys.n0;
  return out;
}

}  // namespace rbl
