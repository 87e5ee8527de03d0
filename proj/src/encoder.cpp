#include "wsidg/encoder.hpp"

#include <cstring>
#include <fstream>

namespace wsidg {

std::string to_string(Backbone b) { return b == Backbone::Tiny ? "tiny" : "resnet18-like"; }

Backbone backbone_from_string(const std::string& name) {
  if (name == "tiny") return Backbone::Tiny;
  if (name == "resnet18-like" || name == "resnet18") return Backbone::ResNet18Like;
  throw InvalidInput("unknown backbone '" + name + "'");
}

StyleMode style_mode_from_string(const std::string& name) {
  if (name == "A" || name == "activations") return StyleMode::Activations;
  if (name == "B" || name == "raw_color") return StyleMode::RawColor;
  throw InvalidInput("unknown style mode '" + name + "'");
}

std::string to_string(StyleMode mode) { return mode == StyleMode::Activations ? "A" : "B"; }

void EncoderConfig::validate() const {
  if (embed_dim <= 0 || hidden_dim <= 0 || base_width <= 0) {
    throw InvalidInput("encoder dimensions must be positive");
  }
  if (stem_pool <= 0 || patch_size <= 0 || patch_size % stem_pool != 0) {
    throw InvalidInput("patch_size must be a positive multiple of stem_pool");
  }
  const int side = patch_size / stem_pool;
  const int min_side = backbone == Backbone::Tiny ? 4 : 8;
  if (side < min_side) throw InvalidInput("stem output too small for the backbone");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"backbone", to_string(c.backbone)}, {"embed_dim", c.embed_dim},
       {"hidden_dim", c.hidden_dim},        {"base_width", c.base_width},
       {"patch_size", c.patch_size},        {"stem_pool", c.stem_pool},
       {"pretrained_init", c.pretrained_init}, {"pretrained_path", c.pretrained_path}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  const EncoderConfig d;
  c.backbone = backbone_from_string(j.value("backbone", to_string(d.backbone)));
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  c.base_width = j.value("base_width", d.base_width);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.stem_pool = j.value("stem_pool", d.stem_pool);
  c.pretrained_init = j.value("pretrained_init", d.pretrained_init);
  c.pretrained_path = j.value("pretrained_path", d.pretrained_path);
}

StyleFeature raw_color_style(const Image& patch) {
  if (patch.channels != 3 || patch.empty()) throw InvalidInput("raw_color_style: expected an RGB patch");
  const auto n = static_cast<double>(patch.width) * patch.height;
  StyleFeature f = StyleFeature::Zero(6);
  for (std::size_t i = 0; i < patch.pixels.size(); ++i) f(i % 3) += patch.pixels[i];
  f.head(3) /= n;
  for (std::size_t i = 0; i < patch.pixels.size(); ++i) {
    const double d = patch.pixels[i] - f(i % 3);
    f(3 + i % 3) += d * d;
  }
  f.tail(3) = (f.tail(3) / n).cwiseSqrt();
  return f;
}

namespace {

constexpr char kMagic[8] = {'W', 'S', 'I', 'D', 'G', 'C', 'K', 'P'};

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw IoError("truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  nlohmann::json meta = {{"encoder", ckpt.config}, {"rng_state", ckpt.rng_state}, {"metadata", ckpt.metadata}};
  const std::string text = meta.dump();
  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, Checkpoint::kVersion);
  put<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  put<std::uint64_t>(os, static_cast<std::uint64_t>(ckpt.parameters.size()));
  os.write(reinterpret_cast<const char*>(ckpt.parameters.data()),
           static_cast<std::streamsize>(ckpt.parameters.size() * sizeof(double)));
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint not found: " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0) throw IoError("not a checkpoint: " + path.string());
  const auto version = get<std::uint32_t>(is);
  if (version != Checkpoint::kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  const auto len = get<std::uint64_t>(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  const auto meta = nlohmann::json::parse(text);
  Checkpoint ckpt;
  meta.at("encoder").get_to(ckpt.config);
  ckpt.rng_state = meta.value("rng_state", std::string());
  ckpt.metadata = meta.value("metadata", nlohmann::json::object());
  const auto n = get<std::uint64_t>(is);
  ckpt.parameters.resize(static_cast<Eigen::Index>(n));
  is.read(reinterpret_cast<char*>(ckpt.parameters.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw IoError("truncated checkpoint " + path.string());
  return ckpt;
}

Encoder<double> encoder_from_checkpoint(const Checkpoint& ckpt, const EncoderConfig& expected) {
  if (!(ckpt.config == expected)) {
    throw InvalidInput("checkpoint encoder config does not match the experiment config");
  }
  return encoder_from_checkpoint(ckpt);
}

Encoder<double> encoder_from_checkpoint(const Checkpoint& ckpt) {
  Encoder<double> enc(ckpt.config, 0);
  if (enc.parameter_count() != ckpt.parameters.size()) {
    throw InvalidInput("checkpoint holds " + std::to_string(ckpt.parameters.size()) +
                       " parameters, encoder expects " + std::to_string(enc.parameter_count()));
  }
  enc.parameters() = ckpt.parameters;
  return enc;
}

Encoder<double> make_encoder(const EncoderConfig& config, std::uint64_t seed) {
  if (!config.pretrained_init) return Encoder<double>(config, seed);
  if (config.pretrained_path.empty()) {
    throw InvalidInput("pretrained_init requires pretrained_path (no bundled weights)");
  }
  return encoder_from_checkpoint(load_checkpoint(config.pretrained_path), config);
}

}  // namespace wsidg
