#include "bias/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace bias {

namespace {

constexpr std::string_view kMagic = "bias-checkpoint";

void append_array(Checkpoint& ckpt, const Parameter<float>& p) {
  ckpt.arrays.push_back({p.name, p.value});
}

void append_backbone(Checkpoint& ckpt, const LmNetwork<float>& net) {
  for (const auto* p : net.parameters()) append_array(ckpt, *p);
}

void assign(Parameter<float>& p, const Checkpoint& ckpt) {
  const Dense2D& v = ckpt.array(p.name);
  if (v.rows() != p.rows() || v.cols() != p.cols())
    throw FormatError("checkpoint: array " + p.name + " has shape " + shape_str(v) +
                      ", config expects " + shape_str(p.value));
  p.value = v;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

const Dense2D& Checkpoint::array(std::string_view name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a.value;
  throw FormatError("checkpoint: missing array " + std::string(name));
}

Checkpoint to_checkpoint(const LmNetwork<float>& net, std::string vocab_hash) {
  Checkpoint ckpt;
  ckpt.config = net.config;
  ckpt.config.num_classes = 0;
  ckpt.vocab_hash = std::move(vocab_hash);
  append_backbone(ckpt, net);
  return ckpt;
}

Checkpoint to_checkpoint(const ClassifierNetwork<float>& net, std::string vocab_hash) {
  Checkpoint ckpt;
  ckpt.config = net.backbone.config;
  ckpt.config.num_classes = net.num_classes();
  ckpt.vocab_hash = std::move(vocab_hash);
  ckpt.lm_head_frozen = net.lm_head_frozen;
  append_backbone(ckpt, net.backbone);
  append_array(ckpt, net.class_w);
  append_array(ckpt, net.class_b);
  return ckpt;
}

LmNetwork<float> lm_from_checkpoint(const Checkpoint& ckpt) {
  ModelConfig cfg = ckpt.config;
  cfg.num_classes = 0;
  LmNetwork<float> net(cfg, 0);
  for (auto* p : net.parameters()) assign(*p, ckpt);
  return net;
}

ClassifierNetwork<float> classifier_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.config.num_classes < 2)
    throw FormatError("checkpoint: not a classifier checkpoint (num_classes = " +
                      std::to_string(ckpt.config.num_classes) + ")");
  auto net = attach_classifier_head(lm_from_checkpoint(ckpt), ckpt.config.num_classes,
                                    ckpt.lm_head_frozen);
  assign(net.class_w, ckpt);
  assign(net.class_b, ckpt);
  return net;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const ModelConfig& c = ckpt.config;
  std::ostringstream header;
  header << kMagic << '\n'
         << "format_version " << ckpt.format_version << '\n'
         << "vocab_size " << c.vocab_size << '\n'
         << "embed_dim " << c.embed_dim << '\n'
         << "hidden_dim " << c.hidden_dim << '\n'
         << "num_layers " << c.num_layers << '\n'
         << "dropout_keep " << format_real(c.dropout_keep) << '\n'
         << "bptt_window " << c.bptt_window << '\n'
         << "num_classes " << c.num_classes << '\n'
         << "lm_head_frozen " << (ckpt.lm_head_frozen ? 1 : 0) << '\n'
         << "vocab_hash " << (ckpt.vocab_hash.empty() ? "-" : ckpt.vocab_hash) << '\n';
  std::string blob;
  for (const auto& a : ckpt.arrays) {
    header << "param " << a.name << ' ' << a.value.rows() << ' ' << a.value.cols() << ' '
           << blob.size() << '\n';
    for (Index i = 0; i < a.value.size(); ++i)
      put_u32(blob, std::bit_cast<std::uint32_t>(a.value.reshaped<Eigen::AutoOrder>()(i)));
  }
  header << "data_bytes " << blob.size() << '\n' << "end\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("checkpoint: cannot write " + path.string());
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw Error("checkpoint: write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("checkpoint: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const auto end_pos = bytes.find("\nend\n");
  if (bytes.rfind(kMagic, 0) != 0 || end_pos == std::string::npos)
    throw FormatError("checkpoint: " + path.string() + " has no valid header");
  const std::size_t data_start = end_pos + 5;

  Checkpoint ckpt;
  ckpt.format_version = -1;
  struct Decl {
    std::string name;
    Index rows, cols;
    std::size_t offset;
  };
  std::vector<Decl> decls;
  std::size_t data_bytes = 0;
  bool have_data_bytes = false;

  std::istringstream lines(bytes.substr(0, end_pos));
  std::string line;
  std::getline(lines, line);  // magic
  while (std::getline(lines, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    auto& c = ckpt.config;
    if (key == "format_version") ls >> ckpt.format_version;
    else if (key == "vocab_size") ls >> c.vocab_size;
    else if (key == "embed_dim") ls >> c.embed_dim;
    else if (key == "hidden_dim") ls >> c.hidden_dim;
    else if (key == "num_layers") ls >> c.num_layers;
    else if (key == "dropout_keep") ls >> c.dropout_keep;
    else if (key == "bptt_window") ls >> c.bptt_window;
    else if (key == "num_classes") ls >> c.num_classes;
    else if (key == "lm_head_frozen") {
      int f = 0;
      ls >> f;
      ckpt.lm_head_frozen = f != 0;
    } else if (key == "vocab_hash") {
      ls >> ckpt.vocab_hash;
      if (ckpt.vocab_hash == "-") ckpt.vocab_hash.clear();
    } else if (key == "param") {
      Decl d;
      ls >> d.name >> d.rows >> d.cols >> d.offset;
      if (d.rows < 0 || d.cols < 0) ls.setstate(std::ios::failbit);
      decls.push_back(d);
    } else if (key == "data_bytes") {
      ls >> data_bytes;
      have_data_bytes = true;
    } else {
      throw FormatError("checkpoint: unknown header key '" + key + "'");
    }
    if (ls.fail()) throw FormatError("checkpoint: malformed header line '" + line + "'");
  }

  if (ckpt.format_version != kCheckpointVersion)
    throw VersionError("checkpoint: format_version " + std::to_string(ckpt.format_version) +
                       ", expected " + std::to_string(kCheckpointVersion));
  if (!have_data_bytes) throw FormatError("checkpoint: header lacks data_bytes");
  if (bytes.size() - data_start != data_bytes)
    throw FormatError("checkpoint: header declares " + std::to_string(data_bytes) +
                      " data bytes, file holds " + std::to_string(bytes.size() - data_start));
  try {
    ckpt.config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }

  const char* data = bytes.data() + data_start;
  for (const auto& d : decls) {
    const std::size_t n = static_cast<std::size_t>(d.rows * d.cols);
    if (d.offset + 4 * n > data_bytes)
      throw FormatError("checkpoint: array " + d.name + " runs past the data section");
    Dense2D value(d.rows, d.cols);
    for (std::size_t i = 0; i < n; ++i)
      value.reshaped<Eigen::AutoOrder>()(static_cast<Index>(i)) =
          std::bit_cast<float>(get_u32(data + d.offset + 4 * i));
    ckpt.arrays.push_back({d.name, std::move(value)});
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::string_view expected_vocab_hash) {
  Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.vocab_hash != expected_vocab_hash)
    throw CompatibilityError("checkpoint: " + path.string() + " was trained with vocabulary " +
                             (ckpt.vocab_hash.empty() ? "<none>" : ckpt.vocab_hash) +
                             ", current vocabulary is " + std::string(expected_vocab_hash));
  return ckpt;
}

}  // namespace bias
