#include "bdrl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace bdrl {

namespace {

constexpr char kRewardMagic[8] = {'B', 'D', 'R', 'L', 'R', 'W', 'D', '1'};
constexpr char kPolicyMagic[8] = {'B', 'D', 'R', 'L', 'P', 'L', 'M', '1'};
constexpr uint32_t kFormatVersion = 1;

void put_u32(std::ofstream& out, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
               static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b, 4);
}

void put_u64(std::ofstream& out, uint64_t v) {
  put_u32(out, static_cast<uint32_t>(v & 0xFFFFFFFFULL));
  put_u32(out, static_cast<uint32_t>(v >> 32));
}

uint32_t get_u32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("checkpoint truncated: " + path);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t get_u64(std::ifstream& in, const std::string& path) {
  uint64_t lo = get_u32(in, path);
  uint64_t hi = get_u32(in, path);
  return lo | (hi << 32);
}

void put_params(std::ofstream& out, const std::vector<double>& params) {
  put_u64(out, params.size());
  for (double d : params) {
    float f = static_cast<float>(d);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
  }
}

std::vector<double> get_params(std::ifstream& in, const std::string& path,
                               size_t expected) {
  uint64_t n = get_u64(in, path);
  if (n != expected)
    throw std::runtime_error("checkpoint parameter count mismatch in " + path);
  std::vector<double> params(n);
  for (auto& d : params) {
    uint32_t bits = get_u32(in, path);
    float f;
    std::memcpy(&f, &bits, 4);
    d = f;
  }
  return params;
}

void check_magic(std::ifstream& in, const char (&magic)[8], const std::string& path) {
  char buf[8];
  if (!in.read(buf, 8) || std::memcmp(buf, magic, 8) != 0)
    throw std::runtime_error("not a valid checkpoint (bad magic): " + path);
}

}  // namespace

void save_reward_checkpoint(const RewardModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kRewardMagic, 8);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<uint32_t>(model.vocab->size()));
  put_u32(out, static_cast<uint32_t>(model.dim));
  put_params(out, model.param_vector());
  if (!out) throw std::runtime_error("write failed: " + path);
}

RewardModel load_reward_checkpoint(const std::string& path,
                                   std::shared_ptr<const Vocab> vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  check_magic(in, kRewardMagic, path);
  uint32_t version = get_u32(in, path);
  if (version != kFormatVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path);
  uint32_t vocab_size = get_u32(in, path);
  if (static_cast<int>(vocab_size) != vocab->size())
    throw std::runtime_error("checkpoint vocab size " + std::to_string(vocab_size) +
                             " does not match vocab file (" +
                             std::to_string(vocab->size()) + "): " + path);
  uint32_t dim = get_u32(in, path);
  RewardModel model = init_reward(std::move(vocab), static_cast<int>(dim), 0);
  model.version = version;
  model.set_param_vector(get_params(in, path, model.param_count()));
  return model;
}

void save_policy_checkpoint(const PolicyLM& policy, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kPolicyMagic, 8);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<uint32_t>(policy.vocab->size()));
  put_u32(out, static_cast<uint32_t>(policy.dims.d_model));
  put_u32(out, static_cast<uint32_t>(policy.dims.n_heads));
  put_u32(out, static_cast<uint32_t>(policy.dims.n_layers));
  put_u32(out, static_cast<uint32_t>(policy.dims.d_ff));
  put_u32(out, static_cast<uint32_t>(policy.dims.context_len));
  put_params(out, policy.param_vector());
  if (!out) throw std::runtime_error("write failed: " + path);
}

PolicyLM load_policy_checkpoint(const std::string& path,
                                std::shared_ptr<const Vocab> vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  check_magic(in, kPolicyMagic, path);
  uint32_t version = get_u32(in, path);
  if (version != kFormatVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path);
  uint32_t vocab_size = get_u32(in, path);
  if (static_cast<int>(vocab_size) != vocab->size())
    throw std::runtime_error("checkpoint vocab size " + std::to_string(vocab_size) +
                             " does not match vocab file (" +
                             std::to_string(vocab->size()) + "): " + path);
  PolicyDims dims;
  dims.d_model = static_cast<int>(get_u32(in, path));
  dims.n_heads = static_cast<int>(get_u32(in, path));
  dims.n_layers = static_cast<int>(get_u32(in, path));
  dims.d_ff = static_cast<int>(get_u32(in, path));
  dims.context_len = static_cast<int>(get_u32(in, path));
  PolicyLM policy = init_policy(std::move(vocab), dims, 0);
  policy.version = version;
  policy.set_param_vector(get_params(in, path, policy.param_count()));
  return policy;
}

}  // namespace bdrl
