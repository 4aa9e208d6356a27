#include "cmr/tensor.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

#include <fmt/core.h>

namespace cmr {

namespace {
std::atomic<std::uint64_t> next_generation{1};
}

std::string Shape::str() const { return fmt::format("({}, {}, {}, {})", n, c, h, w); }

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape) {
  if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
    throw std::invalid_argument(fmt::format("tensor dimensions must be >= 1, got {}", shape.str()));
  }
  if (data.size() != shape.numel()) {
    throw std::invalid_argument(
        fmt::format("tensor data length {} does not match shape {} ({} elements)", data.size(), shape.str(),
                    shape.numel()));
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(shape, 0.0); }

Tensor Tensor::full(Shape shape, double value) { return Tensor(shape, std::vector<double>(shape.numel(), value)); }

Tensor Tensor::scalar(double value) { return Tensor(Shape{1, 1, 1, 1}, {value}); }

std::span<const double> Tensor::data() const {
  if (!data_) {
    return {};
  }
  return {data_->data(), data_->size()};
}

double Tensor::at(int n, int c, int h, int w) const {
  const auto idx = ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  return (*data_)[idx];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument(fmt::format("item() needs a single-element tensor, got {}", shape_.str()));
  }
  return (*data_)[0];
}

bool Tensor::tracked() const {
  if (graph_ == nullptr) {
    return false;
  }
  auto live = tape_.lock();
  return live && *live == generation_;
}

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.graph_ = nullptr;
  t.tape_.reset();
  t.node_ = kNoNode;
  t.generation_ = 0;
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != numel()) {
    throw std::invalid_argument(fmt::format("cannot reshape {} to {}", shape_.str(), shape.str()));
  }
  Tensor t = detach();
  t.shape_ = shape;
  if (tracked()) {
    const NodeId parent = node_;
    return graph_->record(shape, *data_, [parent](std::span<const double> g, GradSink& sink) {
      auto gp = sink.grad(parent);
      for (std::size_t i = 0; i < g.size(); ++i) {
        gp[i] += g[i];
      }
    });
  }
  return t;
}

std::span<double> GradSink::grad(NodeId id) {
  if (id == kNoNode) {
    return {};
  }
  auto& buf = buffers_[static_cast<std::size_t>(id)];
  if (buf.empty()) {
    buf.assign(graph_.nodes_[static_cast<std::size_t>(id)].size, 0.0);
  }
  return {buf.data(), buf.size()};
}

Tensor Gradients::of(const Tensor& leaf) const {
  if (leaf.node_ != kNoNode && leaf.generation_ == generation_) {
    auto it = grads_.find(leaf.node_);
    if (it != grads_.end()) {
      return Tensor(it->second.first, it->second.second);
    }
  }
  return Tensor::zeros(leaf.shape());
}

bool Gradients::contains(const Tensor& leaf) const {
  return leaf.node_ != kNoNode && leaf.generation_ == generation_ && grads_.contains(leaf.node_);
}

Graph::Graph() : generation_(std::make_shared<std::uint64_t>(next_generation.fetch_add(1))) {}

Tensor Graph::attach(Tensor t, NodeId id) const {
  t.graph_ = const_cast<Graph*>(this);
  t.tape_ = generation_;
  t.node_ = id;
  t.generation_ = *generation_;
  return t;
}

Tensor Graph::watch(const Tensor& value) {
  if (value.empty()) {
    throw std::invalid_argument("cannot watch an empty tensor");
  }
  Tensor t = value.detach();
  Node node;
  node.size = value.numel();
  node.shape = value.shape();
  node.leaf = true;
  nodes_.push_back(std::move(node));
  return attach(std::move(t), static_cast<NodeId>(nodes_.size() - 1));
}

Tensor Graph::record(Shape shape, std::vector<double> data, BackwardFn fn) {
  Tensor t(shape, std::move(data));
  Node node;
  node.size = t.numel();
  node.shape = shape;
  node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return attach(std::move(t), static_cast<NodeId>(nodes_.size() - 1));
}

NodeId Graph::id_of(const Tensor& t) const {
  if (t.graph_ != this || !t.tracked()) {
    return kNoNode;
  }
  return t.node_;
}

Graph* Graph::common(std::initializer_list<const Tensor*> inputs) {
  Graph* g = nullptr;
  for (const Tensor* t : inputs) {
    if (t == nullptr || !t->tracked()) {
      continue;
    }
    if (g != nullptr && g != t->graph_) {
      throw std::logic_error("inputs are recorded on different graphs");
    }
    g = t->graph_;
  }
  return g;
}

Gradients Graph::backward(const Tensor& loss) {
  if (id_of(loss) == kNoNode) {
    throw std::invalid_argument("loss is not recorded on this graph");
  }
  if (loss.numel() != 1) {
    throw std::invalid_argument(fmt::format("backward needs a scalar loss, got shape {}", loss.shape().str()));
  }
  GradSink sink(*this);
  sink.buffers_.resize(nodes_.size());
  sink.buffers_[static_cast<std::size_t>(loss.node_)].assign(1, 1.0);

  Gradients out;
  out.generation_ = *generation_;
  for (auto i = static_cast<NodeId>(nodes_.size()) - 1; i >= 0; --i) {
    auto& buf = sink.buffers_[static_cast<std::size_t>(i)];
    if (buf.empty()) {
      continue;
    }
    Node& node = nodes_[static_cast<std::size_t>(i)];
    if (node.leaf) {
      out.grads_.emplace(i, std::make_pair(node.shape, std::move(buf)));
    } else if (node.backward) {
      node.backward(std::span<const double>(buf.data(), buf.size()), sink);
    }
    std::vector<double>().swap(buf);
  }
  clear();
  return out;
}

void Graph::clear() {
  nodes_.clear();
  *generation_ = next_generation.fetch_add(1);
}

} // namespace cmr
