#include "ldr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace ldr {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(const std::vector<std::uint8_t>& in, std::size_t& off) {
  if (in.size() - off < sizeof(T)) throw CheckpointError("checkpoint truncated at byte " + std::to_string(off));
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

void put_record(std::vector<std::uint8_t>& out, std::uint32_t tag, std::uint32_t layer, const Matrix& m) {
  put(out, tag);
  put(out, layer);
  put(out, static_cast<std::uint32_t>(m.rows()));
  put(out, static_cast<std::uint32_t>(m.cols()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) put(out, m(r, c));
}

std::uint32_t sn_vector_tag(NetRole role) {
  return role == NetRole::Encoder ? param_tag::kEncoderSnVector : param_tag::kDecoderSnVector;
}
std::uint32_t sn_sigma_tag(NetRole role) {
  return role == NetRole::Encoder ? param_tag::kEncoderSnSigma : param_tag::kDecoderSnSigma;
}

void add_sn_records(CheckpointData& d, const NetParams& net) {
  for (std::size_t l = 0; l < net.depth(); ++l) {
    if (!net.layers[l].spectral_normalized) continue;
    d.records.push_back({sn_vector_tag(net.role), static_cast<std::uint32_t>(l), Matrix(net.sn_u[l])});
    d.records.push_back({sn_sigma_tag(net.role), static_cast<std::uint32_t>(l), Matrix::Constant(1, 1, net.sn_sigma[l])});
  }
}

std::string tag_name(std::uint32_t tag, std::uint32_t layer) {
  using namespace param_tag;
  std::string base;
  switch (tag & 0xff) {
    case kEncoderWeight: base = "encoder weight"; break;
    case kEncoderBias: base = "encoder bias"; break;
    case kEncoderSnVector: base = "encoder spectral vector"; break;
    case kEncoderSnSigma: base = "encoder spectral sigma"; break;
    case kDecoderWeight: base = "decoder weight"; break;
    case kDecoderBias: base = "decoder bias"; break;
    case kDecoderSnVector: base = "decoder spectral vector"; break;
    case kDecoderSnSigma: base = "decoder spectral sigma"; break;
    case kHeadW: base = "classifier head"; break;
    case kHeadDiscW: base = "discriminator weights"; break;
    case kHeadDiscB: base = "discriminator biases"; break;
    default: base = "tag " + std::to_string(tag);
  }
  if ((tag & 0xf00) == kAdamFirstMoment) base = "Adam first moment of " + base;
  if ((tag & 0xf00) == kAdamSecondMoment) base = "Adam second moment of " + base;
  return base + " (layer " + std::to_string(layer) + ")";
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 8);
  for (const auto& r : data.records) put_record(out, r.tag, r.layer, r.value);
  put(out, data.iteration);
  return out;
}

CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  CheckpointData d;
  std::size_t off = 8;
  while (bytes.size() - off > 8) {
    CheckpointRecord r;
    r.tag = get<std::uint32_t>(bytes, off);
    r.layer = get<std::uint32_t>(bytes, off);
    const auto rows = get<std::uint32_t>(bytes, off);
    const auto cols = get<std::uint32_t>(bytes, off);
    if (std::uint64_t{rows} * cols * 8 > bytes.size() - off) {
      throw CheckpointError("checkpoint record " + tag_name(r.tag, r.layer) + " is truncated");
    }
    r.value.resize(rows, cols);
    for (Index i = 0; i < r.value.rows(); ++i)
      for (Index j = 0; j < r.value.cols(); ++j) r.value(i, j) = get<double>(bytes, off);
    d.records.push_back(std::move(r));
  }
  if (bytes.size() - off != 8) throw CheckpointError("checkpoint is missing its iteration counter");
  d.iteration = get<std::uint64_t>(bytes, off);
  return d;
}

CheckpointData snapshot(const Model& model, const AdamState& encoder_adam, const AdamState& decoder_adam,
                        std::uint64_t iteration) {
  using namespace param_tag;
  Model copy = model;
  CheckpointData d;
  d.iteration = iteration;
  const auto enc = player_params(copy, Player::Encoder);
  const auto dec = player_params(copy, Player::Decoder);
  for (const auto& p : enc) d.records.push_back({p.tag, p.layer, *p.value});
  for (const auto& p : dec) d.records.push_back({p.tag, p.layer, *p.value});
  add_sn_records(d, model.encoder);
  add_sn_records(d, model.decoder);

  auto add_adam = [&](const std::vector<ParamRef>& params, const AdamState& st, Player player) {
    if (st.m.size() != params.size()) throw CheckpointError("Adam state does not match the model");
    for (std::size_t i = 0; i < params.size(); ++i) {
      d.records.push_back({kAdamFirstMoment | params[i].tag, params[i].layer, st.m[i]});
      d.records.push_back({kAdamSecondMoment | params[i].tag, params[i].layer, st.v[i]});
    }
    d.records.push_back({kAdamStep | static_cast<std::uint32_t>(player), 0,
                         Matrix::Constant(1, 1, static_cast<double>(st.step))});
  };
  add_adam(enc, encoder_adam, Player::Encoder);
  add_adam(dec, decoder_adam, Player::Decoder);
  return d;
}

void restore(const CheckpointData& data, Model& model, AdamState* encoder_adam, AdamState* decoder_adam) {
  using namespace param_tag;
  std::map<std::pair<std::uint32_t, std::uint32_t>, const Matrix*> by_key;
  for (const auto& r : data.records) by_key[{r.tag, r.layer}] = &r.value;

  auto fetch = [&](std::uint32_t tag, std::uint32_t layer, Index rows, Index cols) -> const Matrix& {
    const auto it = by_key.find({tag, layer});
    if (it == by_key.end()) throw CheckpointError("checkpoint lacks " + tag_name(tag, layer));
    if (it->second->rows() != rows || it->second->cols() != cols) {
      throw CheckpointError("shape mismatch at " + tag_name(tag, layer) + ": checkpoint has " +
                            shape_str(*it->second) + ", configuration expects " + shape_str(rows, cols));
    }
    return *it->second;
  };

  // Reject surplus layers so a deeper checkpoint is not silently truncated.
  for (const auto& r : data.records) {
    const std::uint32_t base = r.tag & 0xff;
    const NetParams* net = nullptr;
    if (base == kEncoderWeight || base == kEncoderBias) net = &model.encoder;
    if (base == kDecoderWeight || base == kDecoderBias) net = &model.decoder;
    if (net != nullptr && r.layer >= net->depth()) {
      throw CheckpointError("checkpoint has " + tag_name(r.tag, r.layer) + " beyond the configured depth " +
                            std::to_string(net->depth()));
    }
  }

  Model staged = model;
  for (Player player : {Player::Encoder, Player::Decoder}) {
    for (const ParamRef& p : player_params(staged, player)) {
      *p.value = fetch(p.tag, p.layer, p.value->rows(), p.value->cols());
    }
  }
  for (NetParams* net : {&staged.encoder, &staged.decoder}) {
    for (std::size_t l = 0; l < net->depth(); ++l) {
      if (!net->layers[l].spectral_normalized) continue;
      const auto layer = static_cast<std::uint32_t>(l);
      net->sn_u[l] = fetch(sn_vector_tag(net->role), layer, net->sn_u[l].size(), 1).col(0);
      net->sn_sigma[l] = fetch(sn_sigma_tag(net->role), layer, 1, 1)(0, 0);
    }
  }
  auto load_adam = [&](AdamState* st, Player player) {
    if (st == nullptr) return;
    const auto params = player_params(staged, player);
    AdamState loaded;
    loaded.init(params);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Index r = params[i].value->rows();
      const Index c = params[i].value->cols();
      loaded.m[i] = fetch(kAdamFirstMoment | params[i].tag, params[i].layer, r, c);
      loaded.v[i] = fetch(kAdamSecondMoment | params[i].tag, params[i].layer, r, c);
    }
    loaded.step = static_cast<std::uint64_t>(fetch(kAdamStep | static_cast<std::uint32_t>(player), 0, 1, 1)(0, 0));
    *st = std::move(loaded);
  };
  load_adam(encoder_adam, Player::Encoder);
  load_adam(decoder_adam, Player::Decoder);
  model = std::move(staged);
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  const auto bytes = encode_checkpoint(data);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& path, const Trainer& trainer) {
  save_checkpoint(path, snapshot(trainer.model(), trainer.adam(Player::Encoder), trainer.adam(Player::Decoder),
                                 static_cast<std::uint64_t>(trainer.iteration())));
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

}  // namespace ldr
