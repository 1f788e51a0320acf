#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <vector>

#include <Eigen/Core>

#include "canshape/error.hpp"

namespace canshape {

/// Static k-d tree over the rows of a point matrix, for r-nearest-neighbour
/// queries in low dimension.
class KdTree {
 public:
  KdTree() = default;

  explicit KdTree(Eigen::MatrixXd points, Eigen::Index leaf_size = 8)
      : points_(std::move(points)), leaf_size_(std::max<Eigen::Index>(1, leaf_size)) {
    index_.resize(static_cast<std::size_t>(points_.rows()));
    std::iota(index_.begin(), index_.end(), Eigen::Index{0});
    if (!index_.empty()) root_ = build(0, index_.size());
  }

  Eigen::Index size() const { return points_.rows(); }
  Eigen::Index dim() const { return points_.cols(); }

  /// Distances to the r nearest points, ascending.
  std::vector<double> nearest(const Eigen::Ref<const Eigen::RowVectorXd>& query, std::size_t r) const {
    if (query.size() != dim()) throw Error(ErrorKind::DimensionMismatch, "query dimension does not match tree");
    r = std::min<std::size_t>(r, index_.size());
    std::priority_queue<double> heap;  // squared distances, max on top
    if (r > 0) search(root_, query, r, heap);
    std::vector<double> out(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
      out[i] = std::sqrt(heap.top());
      heap.pop();
    }
    return out;
  }

 private:
  struct Node {
    std::size_t begin = 0, end = 0;
    Eigen::Index split_dim = -1;  // -1 for leaves
    double split = 0.0;
    int left = -1, right = -1;
  };

  int build(std::size_t begin, std::size_t end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{begin, end});
    if (static_cast<Eigen::Index>(end - begin) <= leaf_size_) return id;

    Eigen::Index best_dim = 0;
    double best_spread = -1.0;
    for (Eigen::Index c = 0; c < dim(); ++c) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::size_t i = begin; i < end; ++i) {
        lo = std::min(lo, points_(index_[i], c));
        hi = std::max(hi, points_(index_[i], c));
      }
      if (hi - lo > best_spread) {
        best_spread = hi - lo;
        best_dim = c;
      }
    }
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(index_.begin() + static_cast<std::ptrdiff_t>(begin), index_.begin() + static_cast<std::ptrdiff_t>(mid),
                     index_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](Eigen::Index a, Eigen::Index b) { return points_(a, best_dim) < points_(b, best_dim); });
    nodes_[static_cast<std::size_t>(id)].split_dim = best_dim;
    nodes_[static_cast<std::size_t>(id)].split = points_(index_[mid], best_dim);
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[static_cast<std::size_t>(id)].left = left;
    nodes_[static_cast<std::size_t>(id)].right = right;
    return id;
  }

  void search(int id, const Eigen::Ref<const Eigen::RowVectorXd>& q, std::size_t r, std::priority_queue<double>& heap) const {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.split_dim < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const double d = (points_.row(index_[i]) - q).squaredNorm();
        if (heap.size() < r) {
          heap.push(d);
        } else if (d < heap.top()) {
          heap.pop();
          heap.push(d);
        }
      }
      return;
    }
    const double diff = q[node.split_dim] - node.split;
    const int near = diff < 0 ? node.left : node.right;
    const int far = diff < 0 ? node.right : node.left;
    search(near, q, r, heap);
    if (heap.size() < r || diff * diff < heap.top()) search(far, q, r, heap);
  }

  Eigen::MatrixXd points_;
  Eigen::Index leaf_size_ = 8;
  std::vector<Eigen::Index> index_;
  std::vector<Node> nodes_;
  int root_ = 0;
};

}  // namespace canshape
