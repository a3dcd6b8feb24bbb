#include "nmt8/graph.hpp"

#include <algorithm>
#include <cstring>
#include <set>

#include "nmt8/errors.hpp"
#include "nmt8/ops.hpp"
#include "nmt8/quant.hpp"

namespace nmt8 {

std::size_t dtype_bytes(DType t) { return t == DType::kI8 ? 1 : 4; }

const char* dtype_name(DType t) {
  switch (t) {
    case DType::kI8: return "i8";
    case DType::kI32: return "i32";
    case DType::kF32: return "f32";
  }
  return "?";
}

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kGemm: return "gemm";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kRelu: return "relu";
    case OpKind::kBiasAdd: return "bias_add";
    case OpKind::kResidualCombine: return "residual_combine";
    case OpKind::kQuantize: return "quantize";
    case OpKind::kDequantize: return "dequantize";
    case OpKind::kArgmax: return "argmax";
    case OpKind::kFused: return "fused";
  }
  return "?";
}

TensorId OpGraph::add_tensor(std::string name, DType dtype, std::size_t rows, std::size_t cols, bool external) {
  tensors_.push_back(TensorInfo{std::move(name), dtype, rows, cols, external});
  return tensors_.size() - 1;
}

void OpGraph::add_node(Node node) { nodes_.push_back(std::move(node)); }

std::size_t OpGraph::count(OpKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [kind](const Node& n) { return n.kind == kind; }));
}

namespace {

[[noreturn]] void bad_node(const Node& n, const std::string& why) {
  throw ContractError(std::string(op_name(n.kind)) + (n.label.empty() ? "" : " '" + n.label + "'") + ": " + why);
}

void expect_arity(const Node& n, std::size_t ins, std::size_t outs) {
  if (n.inputs.size() != ins || n.outputs.size() != outs) bad_node(n, "wrong number of operands");
}

void check_node(const OpGraph& g, const Node& n) {
  const auto info = [&](TensorId id) -> const TensorInfo& {
    if (id >= g.tensors().size()) bad_node(n, "unknown tensor id " + std::to_string(id));
    return g.tensor(id);
  };
  const auto same_shape = [&](const TensorInfo& a, const TensorInfo& b) {
    if (a.rows != b.rows || a.cols != b.cols) bad_node(n, "operand shapes differ");
  };
  const auto want = [&](const TensorInfo& t, DType d) {
    if (t.dtype != d) bad_node(n, "tensor '" + t.name + "' must be " + dtype_name(d));
  };

  switch (n.kind) {
    case OpKind::kGemm: {
      const GemmAttrs& a = n.gemm;
      if (a.kind == GemmKind::kLinear) {
        expect_arity(n, 1, 1);
        const auto& in = info(n.inputs[0]);
        const auto& out = info(n.outputs[0]);
        want(in, DType::kI8);
        want(out, DType::kI32);
        if (a.weight == nullptr) bad_node(n, "linear gemm without weight");
        if (a.a_col + a.weight->cols > in.cols) bad_node(n, "weight columns exceed the input width");
        if (out.rows != in.rows || out.cols != a.weight->rows) bad_node(n, "output shape mismatch");
      } else {
        expect_arity(n, 2, 1);
        const auto& x = info(n.inputs[0]);
        const auto& y = info(n.inputs[1]);
        const auto& out = info(n.outputs[0]);
        want(x, DType::kI8);
        want(y, DType::kI8);
        want(out, DType::kI32);
        const std::size_t width = a.heads * a.head_dim;
        if (a.heads == 0 || a.head_dim == 0) bad_node(n, "attention gemm needs heads and head_dim");
        if (a.b_col + width > y.cols) bad_node(n, "head slice exceeds the second operand");
        if (a.kind == GemmKind::kScores) {
          if (a.a_col + width > x.cols) bad_node(n, "head slice exceeds the first operand");
          if (out.rows != a.heads * x.rows || out.cols != y.rows) bad_node(n, "scores shape mismatch");
        } else {
          if (x.rows % a.heads != 0 || x.cols != y.rows) bad_node(n, "probabilities shape mismatch");
          if (out.rows != x.rows / a.heads || out.cols != width) bad_node(n, "context shape mismatch");
        }
      }
      return;
    }
    case OpKind::kLayerNorm:
    case OpKind::kSoftmax:
    case OpKind::kRelu:
    case OpKind::kBiasAdd: {
      expect_arity(n, 1, 1);
      const auto& in = info(n.inputs[0]);
      const auto& out = info(n.outputs[0]);
      want(in, DType::kF32);
      want(out, DType::kF32);
      same_shape(in, out);
      if (n.kind == OpKind::kLayerNorm) {
        if (!n.gain || !n.bias || n.gain->size() != in.cols || n.bias->size() != in.cols) {
          bad_node(n, "layer_norm gain/bias missing or mis-sized");
        }
      }
      if (n.kind == OpKind::kBiasAdd && (!n.bias || n.bias->size() < n.bias_offset + in.cols)) {
        bad_node(n, "bias mis-sized");
      }
      if (n.kind == OpKind::kSoftmax && n.causal && n.query_rows == 0) bad_node(n, "causal softmax needs query_rows");
      return;
    }
    case OpKind::kResidualCombine: {
      expect_arity(n, 2, 1);
      const auto& x = info(n.inputs[0]);
      const auto& y = info(n.inputs[1]);
      const auto& out = info(n.outputs[0]);
      want(x, DType::kF32);
      want(y, DType::kF32);
      want(out, DType::kF32);
      same_shape(x, y);
      same_shape(x, out);
      return;
    }
    case OpKind::kQuantize: {
      expect_arity(n, 1, 1);
      const auto& in = info(n.inputs[0]);
      const auto& out = info(n.outputs[0]);
      want(in, DType::kF32);
      want(out, DType::kI8);
      same_shape(in, out);
      std::size_t at = 0;
      for (const auto& s : n.sections) {
        if (s.begin != at || s.end <= s.begin) bad_node(n, "quantize sections must tile the columns in order");
        at = s.end;
      }
      if (at != in.cols) bad_node(n, "quantize sections must cover every column");
      return;
    }
    case OpKind::kDequantize: {
      expect_arity(n, 1, 1);
      const auto& in = info(n.inputs[0]);
      const auto& out = info(n.outputs[0]);
      if (in.dtype == DType::kF32) bad_node(n, "dequantize input must be i8 or i32");
      want(out, DType::kF32);
      same_shape(in, out);
      return;
    }
    case OpKind::kArgmax: {
      expect_arity(n, 1, 1);
      const auto& in = info(n.inputs[0]);
      const auto& out = info(n.outputs[0]);
      want(in, DType::kF32);
      want(out, DType::kI32);
      if (out.rows != in.rows || out.cols != 1) bad_node(n, "argmax output must be rows x 1");
      return;
    }
    case OpKind::kFused: {
      if (n.parts.empty()) bad_node(n, "fused node without parts");
      const std::size_t rows = info(n.parts.front().outputs.at(0)).rows;
      for (const Node& p : n.parts) {
        if (p.kind == OpKind::kGemm || p.kind == OpKind::kFused) bad_node(n, "fused parts must be row-wise ops");
        check_node(g, p);
        if (info(p.outputs[0]).rows != rows) bad_node(n, "fused parts must share one row count");
      }
      return;
    }
  }
}

std::vector<std::optional<std::size_t>> producers(const OpGraph& g) {
  std::vector<std::optional<std::size_t>> prod(g.tensors().size());
  for (std::size_t i = 0; i < g.nodes().size(); ++i) {
    for (TensorId t : g.nodes()[i].outputs) {
      if (t >= prod.size()) throw ContractError("node output refers to an unknown tensor");
      if (prod[t]) throw ContractError("tensor '" + g.tensor(t).name + "' is assigned twice");
      prod[t] = i;
    }
  }
  return prod;
}

std::size_t rows_of(const OpGraph& g, const Node& n) {
  const Node& head = n.kind == OpKind::kFused ? n.parts.front() : n;
  return g.tensor(head.outputs.at(0)).rows;
}

}  // namespace

void OpGraph::validate() const {
  for (const Node& n : nodes_) check_node(*this, n);
  producers(*this);
}

OpGraph topological_sort(const OpGraph& g) {
  const auto prod = producers(g);
  const std::size_t n = g.nodes().size();
  std::vector<std::set<std::size_t>> deps(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (TensorId t : g.nodes()[i].inputs) {
      if (t >= prod.size()) throw ContractError("node input refers to an unknown tensor");
      if (prod[t] && *prod[t] != i) deps[i].insert(*prod[t]);
      if (prod[t] && *prod[t] == i) throw ContractError("cyclic graph: node consumes its own output");
    }
  }
  OpGraph out = g;
  out.nodes().clear();
  std::vector<bool> done(n, false);
  for (std::size_t emitted = 0; emitted < n; ++emitted) {
    std::size_t pick = n;
    for (std::size_t i = 0; i < n && pick == n; ++i) {
      if (done[i]) continue;
      if (std::all_of(deps[i].begin(), deps[i].end(), [&](std::size_t d) { return done[d]; })) pick = i;
    }
    if (pick == n) throw ContractError("cyclic graph: no node is ready");
    done[pick] = true;
    out.add_node(g.nodes()[pick]);
  }
  return out;
}

OpGraph fuse(const OpGraph& g) {
  OpGraph sorted = topological_sort(g);
  sorted.validate();
  const auto& nodes = sorted.nodes();
  const std::size_t n = nodes.size();

  std::vector<std::vector<std::size_t>> consumers(sorted.tensors().size());
  for (std::size_t i = 0; i < n; ++i) {
    for (TensorId t : nodes[i].inputs) consumers[t].push_back(i);
  }

  OpGraph out = sorted;
  out.nodes().clear();
  std::size_t i = 0;
  while (i < n) {
    if (nodes[i].kind == OpKind::kGemm) {
      out.add_node(nodes[i++]);
      continue;
    }
    const std::size_t rows = rows_of(sorted, nodes[i]);
    std::size_t j = i + 1;
    while (j < n && nodes[j].kind != OpKind::kGemm && rows_of(sorted, nodes[j]) == rows) ++j;
    if (j - i == 1) {
      out.add_node(nodes[i++]);
      continue;
    }

    Node fused;
    fused.kind = OpKind::kFused;
    for (std::size_t k = i; k < j; ++k) {
      if (nodes[k].kind == OpKind::kFused) {
        fused.parts.insert(fused.parts.end(), nodes[k].parts.begin(), nodes[k].parts.end());
      } else {
        fused.parts.push_back(nodes[k]);
      }
    }
    std::set<TensorId> produced;
    for (const Node& p : fused.parts) {
      for (TensorId t : p.inputs) {
        if (!produced.count(t) && std::find(fused.inputs.begin(), fused.inputs.end(), t) == fused.inputs.end()) {
          fused.inputs.push_back(t);
        }
      }
      for (TensorId t : p.outputs) produced.insert(t);
    }
    for (const Node& p : fused.parts) {
      for (TensorId t : p.outputs) {
        const bool escapes = std::any_of(consumers[t].begin(), consumers[t].end(),
                                         [&](std::size_t c) { return c < i || c >= j; });
        if (sorted.tensor(t).external || escapes) fused.outputs.push_back(t);
      }
      fused.label += (fused.label.empty() ? "" : "+") + std::string(op_name(p.kind));
    }
    out.add_node(std::move(fused));
    i = j;
  }
  return out;
}

std::vector<std::optional<LiveRange>> live_ranges(const OpGraph& g) {
  const auto prod = producers(g);
  std::vector<std::optional<LiveRange>> ranges(g.tensors().size());
  for (std::size_t i = 0; i < g.nodes().size(); ++i) {
    const Node& node = g.nodes()[i];
    for (TensorId t : node.inputs) {
      const bool produced_later = prod[t] && *prod[t] >= i;
      if (g.tensor(t).external) {
        if (produced_later) throw ContractError("tensor '" + g.tensor(t).name + "' read before it is written");
        continue;
      }
      if (!prod[t] || produced_later) {
        throw ContractError("tensor '" + g.tensor(t).name + "' read before it is written");
      }
      ranges[t]->last = i;
    }
    for (TensorId t : node.outputs) {
      if (!g.tensor(t).external) ranges[t] = LiveRange{i, i};
    }
  }
  return ranges;
}

std::size_t MemoryPlan::count(BufferClass cls) const {
  return static_cast<std::size_t>(
      std::count_if(buffers.begin(), buffers.end(), [cls](const Buffer& b) { return b.cls == cls; }));
}

std::size_t MemoryPlan::total_bytes() const {
  std::size_t total = 0;
  for (const auto& b : buffers) total += b.capacity;
  return total;
}

MemoryPlan plan_memory(const OpGraph& g) {
  const auto ranges = live_ranges(g);
  MemoryPlan plan;
  plan.placement.resize(g.tensors().size());
  std::vector<std::size_t> busy_until;  // last use of the current occupant
  std::vector<bool> occupied;
  for (std::size_t i = 0; i < g.nodes().size(); ++i) {
    for (TensorId t : g.nodes()[i].outputs) {
      const TensorInfo& info = g.tensor(t);
      if (info.external) continue;
      const BufferClass cls = buffer_class(info.dtype);
      std::size_t pick = plan.buffers.size();
      for (std::size_t b = 0; b < plan.buffers.size(); ++b) {
        if (plan.buffers[b].cls == cls && (!occupied[b] || busy_until[b] < i)) {
          pick = b;
          break;
        }
      }
      if (pick == plan.buffers.size()) {
        plan.buffers.push_back({cls, 0});
        busy_until.push_back(0);
        occupied.push_back(false);
      }
      plan.buffers[pick].capacity = std::max(plan.buffers[pick].capacity, info.bytes());
      busy_until[pick] = ranges[t]->last;
      occupied[pick] = true;
      plan.placement[t] = MemoryPlan::Placement{pick, 0};
    }
  }
  return plan;
}

void verify_plan(const OpGraph& g, const MemoryPlan& plan) {
  const auto ranges = live_ranges(g);
  std::vector<TensorId> placed;
  for (TensorId t = 0; t < g.tensors().size(); ++t) {
    if (!ranges[t]) continue;
    if (t >= plan.placement.size() || !plan.placement[t]) {
      throw ContractError("tensor '" + g.tensor(t).name + "' has no placement");
    }
    const auto& p = *plan.placement[t];
    if (p.buffer >= plan.buffers.size() || p.offset + g.tensor(t).bytes() > plan.buffers[p.buffer].capacity) {
      throw ContractError("tensor '" + g.tensor(t).name + "' does not fit its buffer");
    }
    if (plan.buffers[p.buffer].cls != buffer_class(g.tensor(t).dtype)) {
      throw ContractError("tensor '" + g.tensor(t).name + "' placed in a buffer of the wrong class");
    }
    placed.push_back(t);
  }
  for (std::size_t x = 0; x < placed.size(); ++x) {
    for (std::size_t y = x + 1; y < placed.size(); ++y) {
      const TensorId a = placed[x], b = placed[y];
      const auto& pa = *plan.placement[a];
      const auto& pb = *plan.placement[b];
      if (pa.buffer != pb.buffer) continue;
      const bool live_overlap = ranges[a]->first <= ranges[b]->last && ranges[b]->first <= ranges[a]->last;
      const bool byte_overlap =
          pa.offset < pb.offset + g.tensor(b).bytes() && pb.offset < pa.offset + g.tensor(a).bytes();
      if (live_overlap && byte_overlap && g.tensor(a).bytes() && g.tensor(b).bytes()) {
        throw ContractError("tensors '" + g.tensor(a).name + "' and '" + g.tensor(b).name +
                            "' share storage while both live");
      }
    }
  }
}

void Arena::reserve(const MemoryPlan& plan) {
  if (buffers_.size() < plan.buffers.size()) {
    buffers_.resize(plan.buffers.size());
    owners_.resize(plan.buffers.size());
  }
  for (std::size_t b = 0; b < plan.buffers.size(); ++b) {
    if (buffers_[b].size() < plan.buffers[b].capacity) {
      buffers_[b].resize(plan.buffers[b].capacity);
      if (checked_) owners_[b].resize(plan.buffers[b].capacity, -1);
    }
  }
}

void Arena::claim(std::size_t buffer, std::size_t offset, std::size_t bytes, TensorId id) {
  if (!checked_) return;
  std::fill_n(owners_[buffer].begin() + static_cast<std::ptrdiff_t>(offset), bytes, static_cast<std::int64_t>(id));
}

void Arena::require(std::size_t buffer, std::size_t offset, std::size_t bytes, TensorId id) const {
  if (!checked_) return;
  const auto& own = owners_[buffer];
  for (std::size_t i = offset; i < offset + bytes; ++i) {
    if (own[i] != static_cast<std::int64_t>(id)) {
      throw ContractError("arena check: tensor " + std::to_string(id) + " read storage it does not own (buffer " +
                          std::to_string(buffer) + ", byte " + std::to_string(i) + ")");
    }
  }
}

void Arena::release(std::size_t buffer, std::size_t offset, std::size_t bytes) {
  if (!checked_) return;
  std::fill_n(owners_[buffer].begin() + static_cast<std::ptrdiff_t>(offset), bytes, std::int64_t{-1});
  std::fill_n(buffers_[buffer].begin() + static_cast<std::ptrdiff_t>(offset), bytes, std::byte{0xCD});
}

namespace {

struct TensorMeta {
  std::vector<QuantSection> sections;
  std::optional<AccMeta> acc;
};

const QuantParams& section_params(const std::vector<QuantSection>& sections, std::size_t begin, std::size_t end,
                                  const std::string& name) {
  for (const auto& s : sections) {
    if (s.begin <= begin && end <= s.end) return s.params;
  }
  throw ContractError("int8 tensor '" + name + "' has no params covering the requested columns");
}

// One row of a row-wise operator. All operand pointers address row r.
void run_row(const OpGraph& g, const Node& n, std::size_t r, const std::byte* const* in, std::byte* out,
             const std::vector<TensorMeta>& meta) {
  const TensorInfo& oi = g.tensor(n.outputs[0]);
  const std::size_t cols = g.tensor(n.inputs[0]).cols;
  const auto f_in = [&](std::size_t k) { return std::span(reinterpret_cast<const float*>(in[k]), cols); };
  const std::span<float> f_out(reinterpret_cast<float*>(out), oi.dtype == DType::kF32 ? cols : 0);

  switch (n.kind) {
    case OpKind::kLayerNorm:
      layer_norm_row(f_in(0), n.gain->data(), n.bias->data(), f_out);
      return;
    case OpKind::kSoftmax: {
      std::copy_n(f_in(0).data(), cols, f_out.data());
      const std::size_t valid = n.causal ? n.position_offset + r % n.query_rows + 1 : kAllColumns;
      softmax_row(f_out, n.scale, valid);
      return;
    }
    case OpKind::kRelu:
      std::copy_n(f_in(0).data(), cols, f_out.data());
      relu_row(f_out);
      return;
    case OpKind::kBiasAdd:
      std::copy_n(f_in(0).data(), cols, f_out.data());
      bias_add_row(f_out, n.bias->data().subspan(n.bias_offset));
      return;
    case OpKind::kResidualCombine:
      residual_row(f_in(0), f_in(1), n.gamma, f_out);
      return;
    case OpKind::kQuantize: {
      auto* codes = reinterpret_cast<std::uint8_t*>(out);
      const auto x = f_in(0);
      for (const auto& s : n.sections) {
        for (std::size_t c = s.begin; c < s.end; ++c) codes[c] = quantize_value(x[c], s.params);
      }
      return;
    }
    case OpKind::kDequantize: {
      const TensorInfo& ii = g.tensor(n.inputs[0]);
      const TensorMeta& m = meta[n.inputs[0]];
      if (ii.dtype == DType::kI8) {
        const auto* codes = reinterpret_cast<const std::uint8_t*>(in[0]);
        if (m.sections.empty()) throw ContractError("int8 tensor '" + ii.name + "' has no quantization params");
        for (const auto& s : m.sections) {
          for (std::size_t c = s.begin; c < s.end; ++c) f_out[c] = dequantize_value(codes[c], s.params);
        }
      } else {
        if (!m.acc) throw ContractError("accumulator '" + ii.name + "' was not produced by a gemm");
        const auto* acc = reinterpret_cast<const std::int32_t*>(in[0]);
        for (std::size_t c = 0; c < cols; ++c) f_out[c] = m.acc->value(r, c, acc[c]);
      }
      return;
    }
    case OpKind::kArgmax:
      *reinterpret_cast<std::int32_t*>(out) = static_cast<std::int32_t>(argmax_row(f_in(0)));
      return;
    case OpKind::kGemm:
    case OpKind::kFused:
      break;
  }
  throw ContractError("run_row called on a non row-wise node");
}

class Executor {
 public:
  Executor(const OpGraph& g, const MemoryPlan& plan, Arena& arena, const Bindings& bindings,
           const ExecOptions& options)
      : g_(g), plan_(plan), arena_(arena), bindings_(bindings), options_(options), meta_(g.tensors().size()) {
    for (const auto& [id, sections] : bindings.sections) meta_.at(id).sections = sections;
  }

  void run() {
    g_.validate();
    const auto ranges = live_ranges(g_);
    verify_plan(g_, plan_);
    arena_.reserve(plan_);
    for (TensorId t = 0; t < g_.tensors().size(); ++t) {
      const TensorInfo& info = g_.tensor(t);
      if (!info.external) continue;
      const auto it = bindings_.storage.find(t);
      const bool used = ranges.size() > t;  // every external may be bound
      if (it == bindings_.storage.end()) {
        if (used && referenced(t)) throw ContractError("external tensor '" + info.name + "' is not bound");
        continue;
      }
      if (it->second.size() < info.bytes()) throw ShapeError("binding for '" + info.name + "' is too small");
    }

    for (std::size_t i = 0; i < g_.nodes().size(); ++i) {
      const Node& n = g_.nodes()[i];
      for (TensorId t : n.inputs) check_owned(t);
      for (TensorId t : n.outputs) claim(t);
      if (n.kind == OpKind::kGemm) {
        run_gemm(n);
      } else if (n.kind == OpKind::kFused) {
        run_fused(n);
      } else {
        run_plain(n);
      }
      for (TensorId t = 0; t < ranges.size(); ++t) {
        if (ranges[t] && ranges[t]->last == i) release(t);
      }
    }
  }

 private:
  bool referenced(TensorId t) const {
    for (const Node& n : g_.nodes()) {
      if (std::find(n.inputs.begin(), n.inputs.end(), t) != n.inputs.end()) return true;
      if (std::find(n.outputs.begin(), n.outputs.end(), t) != n.outputs.end()) return true;
    }
    return false;
  }

  std::byte* locate(TensorId t) {
    const TensorInfo& info = g_.tensor(t);
    if (info.external) return bindings_.storage.at(t).data();
    const auto& p = plan_.placement.at(t);
    if (!p) throw ContractError("tensor '" + info.name + "' has no placement");
    return arena_.data(p->buffer) + p->offset;
  }

  void check_owned(TensorId t) {
    const TensorInfo& info = g_.tensor(t);
    if (info.external) return;
    const auto& p = *plan_.placement.at(t);
    arena_.require(p.buffer, p.offset, info.bytes(), t);
  }

  void claim(TensorId t) {
    const TensorInfo& info = g_.tensor(t);
    if (info.external) return;
    const auto& p = *plan_.placement.at(t);
    arena_.claim(p.buffer, p.offset, info.bytes(), t);
  }

  void release(TensorId t) {
    const auto& p = *plan_.placement.at(t);
    arena_.release(p.buffer, p.offset, g_.tensor(t).bytes());
  }

  void set_output_meta(const Node& n) {
    if (n.kind == OpKind::kQuantize) meta_[n.outputs[0]].sections = n.sections;
  }

  void run_plain(const Node& n) {
    set_output_meta(n);
    const std::size_t rows = g_.tensor(n.outputs[0]).rows;
    std::vector<const std::byte*> in(n.inputs.size());
    std::vector<std::byte*> bases(n.inputs.size());
    for (std::size_t k = 0; k < n.inputs.size(); ++k) bases[k] = locate(n.inputs[k]);
    std::byte* out = locate(n.outputs[0]);
    const std::size_t out_stride = g_.tensor(n.outputs[0]).row_bytes();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < n.inputs.size(); ++k) in[k] = bases[k] + r * g_.tensor(n.inputs[k]).row_bytes();
      run_row(g_, n, r, in.data(), out + r * out_stride, meta_);
    }
  }

  void run_fused(const Node& n) {
    // Part outputs that do not leave the fused node live in one-row scratch.
    std::map<TensorId, std::vector<std::byte>> scratch;
    for (const Node& p : n.parts) {
      set_output_meta(p);
      for (TensorId t : p.outputs) {
        if (std::find(n.outputs.begin(), n.outputs.end(), t) == n.outputs.end()) {
          scratch[t].assign(g_.tensor(t).row_bytes(), std::byte{0});
        }
      }
    }
    std::map<TensorId, std::byte*> bases;
    for (TensorId t : n.inputs) bases[t] = locate(t);
    for (TensorId t : n.outputs) bases[t] = locate(t);
    const auto row_ptr = [&](TensorId t, std::size_t r) -> std::byte* {
      if (auto it = scratch.find(t); it != scratch.end()) return it->second.data();
      return bases.at(t) + r * g_.tensor(t).row_bytes();
    };

    const std::size_t rows = g_.tensor(n.parts.front().outputs[0]).rows;
    std::vector<const std::byte*> in;
    for (std::size_t r = 0; r < rows; ++r) {
      for (const Node& p : n.parts) {
        in.resize(p.inputs.size());
        for (std::size_t k = 0; k < p.inputs.size(); ++k) in[k] = row_ptr(p.inputs[k], r);
        run_row(g_, p, r, in.data(), row_ptr(p.outputs[0], r), meta_);
      }
    }
  }

  void run_gemm(const Node& n) {
    const GemmAttrs& a = n.gemm;
    const TensorInfo& x = g_.tensor(n.inputs[0]);
    const auto* xa = reinterpret_cast<const std::uint8_t*>(locate(n.inputs[0]));
    auto* out = reinterpret_cast<std::int32_t*>(locate(n.outputs[0]));
    const auto& xs = meta_[n.inputs[0]].sections;
    const std::size_t width = a.heads * a.head_dim;
    AccMeta m;
    switch (a.kind) {
      case GemmKind::kLinear: {
        const QuantParams& xp = section_params(xs, a.a_col, a.a_col + a.weight->cols, x.name);
        m = linear_u8(xa + a.a_col, x.rows, x.cols, xp, *a.weight, out, options_.workers);
        break;
      }
      case GemmKind::kScores: {
        const TensorInfo& y = g_.tensor(n.inputs[1]);
        const auto* ya = reinterpret_cast<const std::uint8_t*>(locate(n.inputs[1]));
        const QuantParams& qp = section_params(xs, a.a_col, a.a_col + width, x.name);
        const QuantParams& kp = section_params(meta_[n.inputs[1]].sections, a.b_col, a.b_col + width, y.name);
        m = scores_u8(xa + a.a_col, x.rows, x.cols, qp, ya + a.b_col, y.rows, y.cols, kp, a.heads, a.head_dim, out,
                      options_.workers);
        break;
      }
      case GemmKind::kContext: {
        const TensorInfo& y = g_.tensor(n.inputs[1]);
        const auto* ya = reinterpret_cast<const std::uint8_t*>(locate(n.inputs[1]));
        const QuantParams& pp = section_params(xs, 0, x.cols, x.name);
        const QuantParams& vp = section_params(meta_[n.inputs[1]].sections, a.b_col, a.b_col + width, y.name);
        m = context_u8(xa, x.rows / a.heads, x.cols, pp, ya + a.b_col, y.cols, vp, a.heads, a.head_dim, out,
                       options_.workers);
        break;
      }
    }
    meta_[n.outputs[0]].acc = std::move(m);
  }

  const OpGraph& g_;
  const MemoryPlan& plan_;
  Arena& arena_;
  const Bindings& bindings_;
  ExecOptions options_;
  std::vector<TensorMeta> meta_;
};

}  // namespace

void execute(const OpGraph& g, const MemoryPlan& plan, Arena& arena, const Bindings& bindings,
             const ExecOptions& options) {
  Executor(g, plan, arena, bindings, options).run();
}

}  // namespace nmt8
