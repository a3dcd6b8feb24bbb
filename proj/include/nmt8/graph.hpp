// graph.hpp - operator graphs, fusion and memory planning
//
// An OpGraph is a topologically ordered list of nodes over single-assignment
// tensors. GEMM nodes run the integer kernels; every other node is a row-wise
// operator. fuse() collapses each run of adjacent row-wise nodes between two
// GEMMs into one fused node whose intermediates never touch memory. The
// planner then assigns every internal tensor to a pre-allocated buffer, one
// live tensor per buffer at a time: int8 tensors to byte buffers, int32
// accumulators and f32 scratch to word buffers.
//
// External tensors (layer input, residual stream, layer output, caches) are
// owned by the caller and bound at execution time.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nmt8/gemm.hpp"
#include "nmt8/kernels.hpp"
#include "nmt8/tensor.hpp"

namespace nmt8 {

enum class DType : std::uint8_t { kI8, kI32, kF32 };
enum class BufferClass : std::uint8_t { kByte, kWord };

std::size_t dtype_bytes(DType t);
const char* dtype_name(DType t);
inline BufferClass buffer_class(DType t) { return t == DType::kI8 ? BufferClass::kByte : BufferClass::kWord; }

enum class OpKind : std::uint8_t {
  kGemm,
  kLayerNorm,
  kSoftmax,
  kRelu,
  kBiasAdd,
  kResidualCombine,
  kQuantize,
  kDequantize,
  kArgmax,
  kFused,
};

const char* op_name(OpKind k);

using TensorId = std::size_t;

struct TensorInfo {
  std::string name;
  DType dtype = DType::kF32;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool external = false;

  std::size_t row_bytes() const { return cols * dtype_bytes(dtype); }
  std::size_t bytes() const { return rows * row_bytes(); }
};

// Columns [begin, end) of an int8 tensor share one set of params.
struct QuantSection {
  std::size_t begin = 0;
  std::size_t end = 0;
  QuantParams params;
};

enum class GemmKind : std::uint8_t {
  kLinear,   // in0 (i8, columns from a_col) x weight^T
  kScores,   // per head: in0[:, a_col + h*d ..] x in1[:, b_col + h*d ..]^T  -> (heads*lq) x lk
  kContext,  // per head: in0 rows h*lq.. (probs) x in1[:, b_col + h*d ..]     -> lq x heads*d
};

struct GemmAttrs {
  GemmKind kind = GemmKind::kLinear;
  const PackedMatrix* weight = nullptr;
  std::size_t a_col = 0;
  std::size_t b_col = 0;
  std::size_t heads = 1;
  std::size_t head_dim = 0;
};

struct Node {
  OpKind kind = OpKind::kRelu;
  std::vector<TensorId> inputs;
  std::vector<TensorId> outputs;
  std::string label;

  GemmAttrs gemm;                        // kGemm
  std::vector<QuantSection> sections;    // kQuantize
  const FTensor* gain = nullptr;         // kLayerNorm
  const FTensor* bias = nullptr;         // kLayerNorm, kBiasAdd
  std::size_t bias_offset = 0;           // kBiasAdd: first bias element used
  float gamma = 1.0f;                    // kResidualCombine, inputs {residual, sublayer}
  float scale = 1.0f;                    // kSoftmax, applied before the max subtraction
  bool causal = false;                   // kSoftmax: row r may see keys <= offset + r % query_rows
  std::size_t query_rows = 1;
  std::size_t position_offset = 0;
  std::vector<Node> parts;               // kFused, in execution order
};

class OpGraph {
 public:
  TensorId add_tensor(std::string name, DType dtype, std::size_t rows, std::size_t cols, bool external = false);
  void add_node(Node node);

  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  const TensorInfo& tensor(TensorId id) const { return tensors_.at(id); }
  const std::vector<Node>& nodes() const { return nodes_; }
  std::vector<Node>& nodes() { return nodes_; }

  std::size_t count(OpKind kind) const;
  // Type and shape checks for every node.
  void validate() const;

 private:
  std::vector<TensorInfo> tensors_;
  std::vector<Node> nodes_;
};

// Reorders nodes topologically (stable); ContractError on a cycle.
OpGraph topological_sort(const OpGraph& g);
OpGraph fuse(const OpGraph& g);

struct LiveRange {
  std::size_t first = 0;
  std::size_t last = 0;
};
// Node-index live range of every internal tensor (nullopt for externals and
// tensors never produced). ContractError on a read before write.
std::vector<std::optional<LiveRange>> live_ranges(const OpGraph& g);

struct MemoryPlan {
  struct Buffer {
    BufferClass cls = BufferClass::kByte;
    std::size_t capacity = 0;
  };
  struct Placement {
    std::size_t buffer = 0;
    std::size_t offset = 0;
  };

  std::vector<Buffer> buffers;
  std::vector<std::optional<Placement>> placement;

  std::size_t count(BufferClass cls) const;
  std::size_t total_bytes() const;
};

MemoryPlan plan_memory(const OpGraph& g);
// ContractError if two tensors with overlapping live ranges share bytes, or a
// buffer is smaller than a tensor placed in it.
void verify_plan(const OpGraph& g, const MemoryPlan& plan);

// Backing storage for a plan. In checked mode every byte remembers which
// tensor owns it; released tensors are poisoned and any read of bytes not
// owned by the tensor being read raises ContractError.
class Arena {
 public:
  explicit Arena(bool checked = false) : checked_(checked) {}

  void reserve(const MemoryPlan& plan);
  std::byte* data(std::size_t buffer) { return buffers_[buffer].data(); }
  bool checked() const { return checked_; }

  void claim(std::size_t buffer, std::size_t offset, std::size_t bytes, TensorId id);
  void require(std::size_t buffer, std::size_t offset, std::size_t bytes, TensorId id) const;
  void release(std::size_t buffer, std::size_t offset, std::size_t bytes);

 private:
  bool checked_;
  std::vector<std::vector<std::byte>> buffers_;
  std::vector<std::vector<std::int64_t>> owners_;
};

struct Bindings {
  std::map<TensorId, std::span<std::byte>> storage;
  // Params of int8 external inputs.
  std::map<TensorId, std::vector<QuantSection>> sections;

  template <typename T>
  void bind(TensorId id, std::span<T> data) {
    storage[id] = std::as_writable_bytes(data);
  }
};

struct ExecOptions {
  int workers = 1;
};

void execute(const OpGraph& g, const MemoryPlan& plan, Arena& arena, const Bindings& bindings,
             const ExecOptions& options = {});

}  // namespace nmt8
