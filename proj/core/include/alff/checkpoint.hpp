#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "alff/tensor.hpp"

namespace alff {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  std::vector<int> shape;
  AlignedVector<float> data;

  bool operator==(const TensorRecord&) const = default;
};

/// Training state on disk. Noise and shuffling are counter-based on
/// (seed, epoch, step), so those three words are the whole RNG state.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t seed = 0;
  std::uint32_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;   // completed optimizer steps
  std::string config_text;
  std::vector<TensorRecord> params;
  std::vector<TensorRecord> momentum;

  bool operator==(const Checkpoint&) const = default;
};

class CheckpointVersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Little-endian: "ALFF", u32 version, u64 seed, u32 epoch, u64 step,
/// string config, then two record lists (parameters, momentum). A string is
/// u32 length + bytes; a record is string name, u32 rank, u32 dims, f32 data.
std::string encode_checkpoint(const Checkpoint& ck);
/// Throws CheckpointVersionError for another format version and
/// std::runtime_error for anything malformed.
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Snapshot of every parameter reached by `visit`, in visit order.
template <typename Params>
std::vector<TensorRecord> records_of(Params& params) {
  std::vector<TensorRecord> out;
  params.visit("", [&](const std::string& name, ParamTensor<float>& t) {
    out.push_back({name, t.shape, t.data});
  });
  return out;
}

/// Copies records into `params`; names, order and shapes must match exactly.
template <typename Params>
void assign_records(Params& params, const std::vector<TensorRecord>& records) {
  std::size_t i = 0;
  params.visit("", [&](const std::string& name, ParamTensor<float>& t) {
    if (i >= records.size()) throw std::runtime_error("checkpoint: missing tensor " + name);
    const TensorRecord& r = records[i++];
    if (r.name != name || r.shape != t.shape) {
      throw std::runtime_error("checkpoint: tensor " + r.name + " does not match model tensor " + name);
    }
    t.data = r.data;
  });
  if (i != records.size()) throw std::runtime_error("checkpoint: unexpected extra tensor " + records[i].name);
}

}  // namespace alff
