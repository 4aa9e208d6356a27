#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace cmr {

enum class Mode { Train, Eval };

// (batch, channels, rows, cols)
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

using NodeId = std::int64_t;
inline constexpr NodeId kNoNode = -1;

class Graph;

// Immutable dense 4-D array of doubles. Copies share storage. A tensor that
// was produced while a Graph was recording carries a handle to its node.
class Tensor {
public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return shape_.numel(); }
  bool empty() const { return data_ == nullptr; }
  std::span<const double> data() const;
  const std::vector<double>& storage() const { return *data_; }
  std::shared_ptr<const std::vector<double>> shared_storage() const { return data_; }

  double at(int n, int c, int h, int w) const;
  double operator[](std::size_t i) const { return (*data_)[i]; }
  // Value of a single-element tensor.
  double item() const;

  // Handle is live only while the recording graph exists and has not been
  // cleared; afterwards the tensor behaves as an untracked constant.
  bool tracked() const;
  Graph* graph() const { return tracked() ? graph_ : nullptr; }
  NodeId node() const { return tracked() ? node_ : kNoNode; }
  // Same values, no graph handle.
  Tensor detach() const;

  Tensor reshaped(Shape shape) const;

private:
  friend class Graph;
  friend class Gradients;
  Shape shape_{};
  std::shared_ptr<const std::vector<double>> data_;
  Graph* graph_ = nullptr;
  std::weak_ptr<const std::uint64_t> tape_;
  NodeId node_ = kNoNode;
  std::uint64_t generation_ = 0;
};

// Scratch space handed to backward closures. grad(id) returns a zeroed
// buffer the first time a node is touched; untracked ids yield an empty span.
class GradSink {
public:
  std::span<double> grad(NodeId id);

private:
  friend class Graph;
  explicit GradSink(Graph& graph) : graph_(graph) {}
  Graph& graph_;
  std::vector<std::vector<double>> buffers_;
};

using BackwardFn = std::function<void(std::span<const double> grad_out, GradSink& sink)>;

// Result of Graph::backward: gradients of watched leaves.
class Gradients {
public:
  // Gradient w.r.t. a watched tensor; zero tensor if the leaf did not
  // influence the loss.
  Tensor of(const Tensor& leaf) const;
  bool contains(const Tensor& leaf) const;

private:
  friend class Graph;
  std::uint64_t generation_ = 0;
  std::unordered_map<NodeId, std::pair<Shape, std::vector<double>>> grads_;
};

// Append-only tape of recorded operations. Not thread-safe: one graph per
// training worker.
class Graph {
public:
  Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Registers a leaf whose gradient will be reported.
  Tensor watch(const Tensor& value);

  // Records an op result. Parents are the node ids captured by `fn`.
  Tensor record(Shape shape, std::vector<double> data, BackwardFn fn);

  // Reverse sweep from a single-element loss. The tape is cleared afterwards
  // and tensors recorded on it become untracked for further recording.
  Gradients backward(const Tensor& loss);

  void clear();
  std::size_t size() const { return nodes_.size(); }

  // Graph shared by the tracked inputs, or nullptr. Throws if inputs belong
  // to different live graphs.
  static Graph* common(std::initializer_list<const Tensor*> inputs);
  // Node id of `t` on this graph, kNoNode if untracked.
  NodeId id_of(const Tensor& t) const;

private:
  friend class GradSink;
  struct Node {
    std::size_t size = 0;
    Shape shape{};
    bool leaf = false;
    BackwardFn backward;
  };
  Tensor attach(Tensor t, NodeId id) const;
  std::vector<Node> nodes_;
  std::shared_ptr<std::uint64_t> generation_;
};

} // namespace cmr
