#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "sakit/network_spec.hpp"
#include "sakit/nn_ops.hpp"
#include "sakit/tensor.hpp"

// Typed view of NetworkSpec layers: argument validation, shape inference
// and parameter declarations. Shapes here exclude the batch dimension.
namespace sakit::layers {

struct InputOp {
  Shape shape;
};
struct LabelsOp {
  int classes = 0;
};
struct ConvOp {
  nn::Conv2dSpec spec;
};
struct PoolOp {
  nn::Pool2dSpec spec;
};
struct ResizeOp {
  int height = 0;
  int width = 0;
};
struct BatchNormOp {
  nn::BatchNormSpec spec;
};
struct ReluOp {};
struct IdentityOp {};
struct ConcatOp {};
struct AddOp {};
struct GlobalAvgPoolOp {};
struct DenseOp {
  int in_features = 0;
  int out_features = 0;
  bool bias = true;
};
struct SoftmaxXentOp {};
// Reduces its input to a scalar: plain sum, or a fixed random linear probe
// (weights uniform in [-1, 1] drawn from `seed`) when seed != 0.
struct SumOp {
  std::uint64_t seed = 0;
};

using OpAttrs = std::variant<InputOp, LabelsOp, ConvOp, PoolOp, ResizeOp, BatchNormOp, ReluOp,
                             IdentityOp, ConcatOp, AddOp, GlobalAvgPoolOp, DenseOp, SoftmaxXentOp,
                             SumOp>;

struct ParamDecl {
  std::string name;
  Shape shape;
  bool trainable = true;  // false for running statistics
};

struct CompiledLayer {
  std::string name;
  OpAttrs attrs;
  std::vector<int> inputs;
  Shape shape;           // per-sample output shape; {1} for scalars
  bool batched = true;   // false once reduced over the batch (losses)
  std::vector<ParamDecl> params;
};

// Validates the DAG, resolves inputs, infers shapes. Errors are ShapeError
// naming the failing node.
std::vector<CompiledLayer> compile(const NetworkSpec& spec);

// Keys accepted on any layer for bookkeeping; ignored by kernels.
bool is_annotation_key(const std::string& key);

Shape parse_dims(const std::string& text);  // "3x32x32" -> {3,32,32}
std::string dims_str(const Shape& s);       // {3,32,32} -> "3x32x32"

}  // namespace sakit::layers
