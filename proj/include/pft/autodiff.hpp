#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pft/loss.hpp"  // Mat, TokenIds

namespace pft {

// Minimal reverse-mode tape over dense double matrices. Nodes are appended in
// topological order, so one reverse sweep over the node list back-propagates
// any set of seeded output gradients.
class Tape {
 public:
  using NodeId = int;

  NodeId leaf(Mat v) { return push(std::move(v), {}); }

  const Mat& value(NodeId id) const { return nodes_[id].value; }
  Mat& grad(NodeId id) {
    auto& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  NodeId matmul(NodeId a, NodeId b) {
    Mat v = value(a) * value(b);
    return push(std::move(v), [a, b](Tape& t, NodeId self) {
      const Mat& g = t.grad(self);
      t.grad(a).noalias() += g * t.value(b).transpose();
      t.grad(b).noalias() += t.value(a).transpose() * g;
    });
  }

  // A * B^T, used for attention scores and the output projection
  NodeId matmul_nt(NodeId a, NodeId b) {
    Mat v = value(a) * value(b).transpose();
    return push(std::move(v), [a, b](Tape& t, NodeId self) {
      const Mat& g = t.grad(self);
      t.grad(a).noalias() += g * t.value(b);
      t.grad(b).noalias() += g.transpose() * t.value(a);
    });
  }

  NodeId add(NodeId a, NodeId b) {
    Mat v = value(a) + value(b);
    return push(std::move(v), [a, b](Tape& t, NodeId self) {
      const Mat& g = t.grad(self);
      t.grad(a) += g;
      t.grad(b) += g;
    });
  }

  NodeId scale(NodeId a, double c) {
    Mat v = value(a) * c;
    return push(std::move(v), [a, c](Tape& t, NodeId self) {
      t.grad(a) += c * t.grad(self);
    });
  }

  NodeId add_const(NodeId a, const Mat& c) {
    Mat v = value(a) + c;
    return push(std::move(v), [a](Tape& t, NodeId self) {
      t.grad(a) += t.grad(self);
    });
  }

  // elementwise product with a constant matrix (dropout masks)
  NodeId mul_const(NodeId a, Mat c) {
    Mat v = value(a).cwiseProduct(c);
    return push(std::move(v), [a, c = std::move(c)](Tape& t, NodeId self) {
      t.grad(a) += t.grad(self).cwiseProduct(c);
    });
  }

  // bias is a 1 x d node broadcast over the rows of a
  NodeId add_row(NodeId a, NodeId bias) {
    Mat v = value(a).rowwise() + value(bias).row(0);
    return push(std::move(v), [a, bias](Tape& t, NodeId self) {
      const Mat& g = t.grad(self);
      t.grad(a) += g;
      t.grad(bias).row(0) += g.colwise().sum();
    });
  }

  NodeId relu(NodeId a) {
    Mat v = value(a).cwiseMax(0.0);
    return push(std::move(v), [a](Tape& t, NodeId self) {
      const Mat& x = t.value(a);
      t.grad(a) += t.grad(self).cwiseProduct(
          (x.array() > 0.0).cast<double>().matrix());
    });
  }

  // row-wise softmax; additive_mask (0 / -inf) is applied before normalizing
  NodeId softmax_rows(NodeId a, const Mat* additive_mask = nullptr) {
    Mat x = value(a);
    if (additive_mask) x += *additive_mask;
    Mat p(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      Eigen::RowVectorXd row = x.row(r);
      double mx = row.maxCoeff();
      Eigen::RowVectorXd e = (row.array() - mx).exp();
      p.row(r) = e / e.sum();
    }
    return push(std::move(p), [a](Tape& t, NodeId self) {
      const Mat& p = t.value(self);
      const Mat& g = t.grad(self);
      Mat& ga = t.grad(a);
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        double dot = g.row(r).dot(p.row(r));
        ga.row(r) += (g.row(r).array() - dot).matrix().cwiseProduct(p.row(r));
      }
    });
  }

  // row-wise layer norm with learned gain/bias (1 x d nodes)
  NodeId layernorm(NodeId a, NodeId gain, NodeId bias, double eps = 1e-5) {
    const Mat& x = value(a);
    const Eigen::Index d = x.cols();
    Mat xhat(x.rows(), d);
    Vec inv_std(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      double mean = x.row(r).mean();
      double var = (x.row(r).array() - mean).square().mean();
      inv_std(r) = 1.0 / std::sqrt(var + eps);
      xhat.row(r) = (x.row(r).array() - mean) * inv_std(r);
    }
    Mat v = xhat;
    v.array().rowwise() *= value(gain).row(0).array();
    v.array().rowwise() += value(bias).row(0).array();
    return push(std::move(v), [a, gain, bias, xhat = std::move(xhat),
                         inv_std = std::move(inv_std)](Tape& t, NodeId self) {
      const Mat& g = t.grad(self);
      t.grad(bias).row(0) += g.colwise().sum();
      t.grad(gain).row(0) += g.cwiseProduct(xhat).colwise().sum();
      Mat dxhat =
          (g.array().rowwise() * t.value(gain).row(0).array()).matrix();
      Mat& ga = t.grad(a);
      const double d = static_cast<double>(g.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        double m1 = dxhat.row(r).sum() / d;
        double m2 = dxhat.row(r).dot(xhat.row(r)) / d;
        ga.row(r) += inv_std(r) *
                     (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2)
                         .matrix();
      }
    });
  }

  // gather rows of an embedding table by token id
  NodeId embed(NodeId table, TokenIds ids) {
    const Mat& e = value(table);
    Mat v(static_cast<Eigen::Index>(ids.size()), e.cols());
    for (std::size_t t = 0; t < ids.size(); ++t) {
      if (ids[t] < 0 || ids[t] >= e.rows())
        throw std::out_of_range("embed: token id out of range");
      v.row(static_cast<Eigen::Index>(t)) = e.row(ids[t]);
    }
    return push(std::move(v),
                [table, ids = std::move(ids)](Tape& t, NodeId self) {
                  const Mat& g = t.grad(self);
                  Mat& ge = t.grad(table);
                  for (std::size_t i = 0; i < ids.size(); ++i)
                    ge.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
                });
  }

  NodeId slice_cols(NodeId a, Eigen::Index start, Eigen::Index width) {
    Mat v = value(a).middleCols(start, width);
    return push(std::move(v), [a, start, width](Tape& t, NodeId self) {
      t.grad(a).middleCols(start, width) += t.grad(self);
    });
  }

  NodeId concat_cols(const std::vector<NodeId>& parts) {
    Eigen::Index rows = value(parts[0]).rows(), cols = 0;
    for (NodeId p : parts) cols += value(p).cols();
    Mat v(rows, cols);
    Eigen::Index off = 0;
    for (NodeId p : parts) {
      v.middleCols(off, value(p).cols()) = value(p);
      off += value(p).cols();
    }
    return push(std::move(v), [parts](Tape& t, NodeId self) {
      const Mat& g = t.grad(self);
      Eigen::Index off = 0;
      for (NodeId p : parts) {
        Eigen::Index w = t.value(p).cols();
        t.grad(p) += g.middleCols(off, w);
        off += w;
      }
    });
  }

  // Seed gradients with grad(id) += ... beforehand, then run one sweep.
  void run_backward() {
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i)
      if (nodes_[i].backprop && nodes_[i].grad.size() != 0)
        nodes_[i].backprop(*this, i);
  }

  std::size_t size() const { return nodes_.size(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&, NodeId)> backprop;
  };

  NodeId push(Mat v, std::function<void(Tape&, NodeId)> f) {
    nodes_.push_back(Node{std::move(v), Mat(), std::move(f)});
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

}  // namespace pft
