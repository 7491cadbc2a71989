#include "tmn/config.hpp"

#include <fstream>
#include <sstream>

namespace tmn {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_string(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) + " is not key = value: " + line);
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    try {
      if (key == "model_kind") cfg.model_kind = model_kind_from_string(value);
      else if (key == "library") cfg.library = library_strategy_from_string(value);
      else if (key == "library_seed") cfg.library_seed = std::stoull(value);
      else if (key == "d_model") cfg.model.d_model = std::stoll(value);
      else if (key == "n_heads") cfg.model.n_heads = std::stoll(value);
      else if (key == "d_ff") cfg.model.d_ff = std::stoll(value);
      else if (key == "n_layers") cfg.model.n_layers_monolithic = std::stoll(value);
      else if (key == "k_layers") cfg.model.layers_per_module = std::stoll(value);
      else if (key == "dropout") cfg.model.dropout = std::stof(value);
      else if (key == "train") cfg.train_path = value;
      else if (key == "val") cfg.val_path = value;
      else if (key == "test") cfg.test_path = value;
      else if (key == "out_dir") cfg.out_dir = value;
      else if (key == "lr") cfg.lr = std::stod(value);
      else if (key == "warmup_steps") cfg.warmup_steps = std::stoi(value);
      else if (key == "batch_size") cfg.batch_size = std::stoi(value);
      else if (key == "epochs") cfg.epochs = std::stoi(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "eval_every") cfg.eval_every = std::stoi(value);
      else if (key == "early_stop_val_acc") cfg.early_stop_val_acc = std::stod(value);
      else throw std::invalid_argument("unknown key '" + key + "'");
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config: line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.model.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

std::string ExperimentConfig::to_string() const {
  std::ostringstream os;
  os << "model_kind = " << tmn::to_string(model_kind) << "\n";
  os << "library = " << tmn::to_string(library) << "\n";
  os << "library_seed = " << library_seed << "\n";
  os << "d_model = " << model.d_model << "\n";
  os << "n_heads = " << model.n_heads << "\n";
  os << "d_ff = " << model.d_ff << "\n";
  os << "n_layers = " << model.n_layers_monolithic << "\n";
  os << "k_layers = " << model.layers_per_module << "\n";
  os << "dropout = " << model.dropout << "\n";
  os << "train = " << train_path << "\n";
  os << "val = " << val_path << "\n";
  os << "test = " << test_path << "\n";
  os << "out_dir = " << out_dir << "\n";
  os << "lr = " << lr << "\n";
  os << "warmup_steps = " << warmup_steps << "\n";
  os << "batch_size = " << batch_size << "\n";
  os << "epochs = " << epochs << "\n";
  os << "seed = " << seed << "\n";
  os << "eval_every = " << eval_every << "\n";
  os << "early_stop_val_acc = " << early_stop_val_acc << "\n";
  return os.str();
}

void ExperimentConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot open " + path + " for writing");
  out << to_string();
}

}  // namespace tmn
