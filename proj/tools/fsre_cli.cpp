// fsre: train, evaluate, ablate, gradcheck, inspect episodes, and generate the
// synthetic benchmark.
//
// Settings resolve as command-line flags > --config file > built-in defaults.
// The config file holds one `key = value` per line; `#` starts a comment. Keys
// are listed in kDefaults below.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsre/errors.hpp"
#include "fsre/fewshot.hpp"
#include "fsre/gradcheck.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace fsre;

namespace {

const std::vector<std::pair<std::string, std::string>> kDefaults{
    {"data", ""},
    {"concepts", ""},
    {"embeddings", ""},
    {"checkpoint", ""},
    {"out", "fsre_out"},
    {"variant", "full"},
    {"n_way", "5"},
    {"k_shot", "1"},
    {"queries", "0"},  // 0 means one per class
    {"alpha", "0.7"},
    {"episodes", "1000"},
    {"eval_episodes", "500"},
    {"seed", "1"},
    {"optimizer", "sgd"},
    {"lr", "0.05"},
    {"grad_clip", "0"},
    {"dim", "32"},
    {"ff_dim", "64"},
    {"max_len", "64"},
    {"projection_dim", "16"},
    {"heads", "1"},
    {"pooling", "mean"},
    {"aggregation", "mean"},
    {"max_concepts", "8"},
    {"vocab_min_count", "2"},
    {"split_train", "0"},  // 0: FewRel's 50/14/16 for 80 relations, else 5/8 : 3/16 : 3/16
    {"split_valid", "0"},
    {"split_test", "0"},
    {"synth_relations", "200"},
    {"synth_concepts", "16"},
    {"synth_distractors", "8"},
    {"synth_instances", "20"},
    {"synth_entities", "20"},
    {"synth_sentence_length", "8"},
    {"synth_filler_vocab", "64"},
    {"synth_concept_dim", "32"},
    {"synth_concept_norm", "1"},
    {"synth_max_concepts", "3"},
    {"dump_gates", ""},
    {"dump_attention", ""},
    {"corrupt_gradient", "0"},
};

class Settings {
 public:
  Settings() {
    for (const auto& [k, v] : kDefaults) values_[k] = v;
  }

  void set(const std::string& key, const std::string& value, const std::string& where) {
    if (!values_.contains(key)) throw std::invalid_argument(where + ": unknown key '" + key + "'");
    values_[key] = value;
  }

  void load_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path.string());
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string{};
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      const std::string where = path.string() + ":" + std::to_string(n);
      if (eq == std::string::npos) throw std::invalid_argument(where + ": expected key = value");
      auto key = trim(line.substr(0, eq));
      std::replace(key.begin(), key.end(), '-', '_');
      set(key, trim(line.substr(eq + 1)), where);
    }
  }

  const std::string& str(const std::string& key) const { return values_.at(key); }

  std::size_t size(const std::string& key) const {
    const auto& v = str(key);
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size() || x < 0) throw std::invalid_argument(key + " must be a non-negative integer, got '" + v + "'");
    return static_cast<std::size_t>(x);
  }

  double real(const std::string& key) const {
    const auto& v = str(key);
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(key + " must be a number, got '" + v + "'");
    return x;
  }

 private:
  std::map<std::string, std::string> values_;
};

struct Data {
  Dataset dataset;
  RelationSplit split;
  std::optional<SyntheticBenchmark> synthetic;
  ConceptIndex index;
  EmbeddingTable table;
  bool has_concepts = false;

  ConceptSource concepts() const {
    if (!has_concepts) return {};
    if (synthetic) return {&synthetic->index, &synthetic->embeddings};
    return {&index, &table};
  }
};

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw std::runtime_error("no such file: " + path);
}

SynthConfig synth_config(const Settings& s) {
  SynthConfig c;
  c.relations = s.size("synth_relations");
  c.concepts = s.size("synth_concepts");
  c.distractor_concepts = s.size("synth_distractors");
  c.instances_per_relation = s.size("synth_instances");
  c.entities_per_concept = s.size("synth_entities");
  c.sentence_length = s.size("synth_sentence_length");
  c.filler_vocab = s.size("synth_filler_vocab");
  c.concept_dim = s.size("synth_concept_dim");
  c.concept_norm = s.real("synth_concept_norm");
  c.max_concepts_per_entity = s.size("synth_max_concepts");
  return c;
}

SplitSizes split_sizes(const Settings& s, std::size_t relations) {
  SplitSizes sizes{s.size("split_train"), s.size("split_valid"), s.size("split_test")};
  if (sizes.train + sizes.valid + sizes.test > 0) return sizes;
  if (relations == kFewRelSplit.train + kFewRelSplit.valid + kFewRelSplit.test) return kFewRelSplit;
  sizes.valid = relations * 3 / 16;
  sizes.test = relations * 3 / 16;
  sizes.train = relations - sizes.valid - sizes.test;
  return sizes;
}

Data load_data(const Settings& s) {
  Data d;
  const auto seed = static_cast<std::uint64_t>(s.size("seed"));
  const auto& concepts = s.str("concepts");
  const auto& embeddings = s.str("embeddings");
  if (concepts.empty() != embeddings.empty())
    throw std::invalid_argument("--concepts and --embeddings must be given together");
  for (const auto& p : {s.str("data"), concepts, embeddings}) {
    if (!p.empty()) require_file(p);
  }
  if (s.str("data").empty()) {
    auto rng = substream(seed, "synthetic");
    d.synthetic = generate_synthetic(synth_config(s), rng);
    d.dataset = d.synthetic->dataset;
    d.has_concepts = true;
  } else {
    d.dataset = load_fewrel(s.str("data"));
    if (!concepts.empty()) {
      d.index = load_triples(concepts, s.size("max_concepts"));
      d.table = load_embeddings(embeddings);
      d.has_concepts = true;
    }
  }
  d.split = split_relations(d.dataset, seed, split_sizes(s, d.dataset.size()));
  return d;
}

ModelConfig model_config(const Settings& s, const Data& d) {
  ModelConfig c;
  c.variant = parse_variant(s.str("variant"));
  c.encoder = {s.size("dim"), s.size("ff_dim"), s.size("max_len")};
  c.concept_dim = d.has_concepts ? d.concepts().dim() : 1;
  c.projection_dim = s.size("projection_dim");
  c.fusion_heads = s.size("heads");
  c.alpha = s.real("alpha");
  c.aggregation = parse_aggregation(s.str("aggregation"));
  c.pooling = parse_pooling(s.str("pooling"));
  c.optimizer = parse_optimizer(s.str("optimizer"));
  c.learning_rate = s.real("lr");
  c.grad_clip = s.real("grad_clip");
  c.max_episodes = s.size("episodes");
  c.seed = s.size("seed");
  c.max_concepts = s.size("max_concepts");
  c.vocab_min_count = s.size("vocab_min_count");
  if (uses_concepts(c.variant) && !d.has_concepts)
    throw std::invalid_argument("variant " + std::string(to_string(c.variant)) +
                                " needs --concepts and --embeddings");
  validate(c);
  return c;
}

EpisodeSpec episode_spec(const Settings& s) {
  EpisodeSpec spec{s.size("n_way"), s.size("k_shot"), s.size("queries")};
  if (spec.q_queries == 0) spec.q_queries = spec.n_way;
  validate(spec);
  return spec;
}

fs::path out_dir(const Settings& s) {
  fs::path dir = s.str("out");
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

Model train_model(const Settings& s, const Data& d, const EpisodeSpec& spec, std::ostream* log) {
  auto model = make_model(model_config(s, d), d.dataset, d.split.train, d.concepts());
  TrainOptions opts;
  if (log != nullptr) {
    opts.on_episode = [log](const TrainLogEntry& e) {
      *log << json{{"episode", e.episode}, {"loss", e.loss}, {"accuracy", e.accuracy}}.dump() << '\n';
      return true;
    };
  }
  train(model, d.dataset, d.split.train, spec, d.concepts(), opts);
  return model;
}

json instance_json(const Instance& inst) {
  return json{{"relation", inst.relation},
              {"tokens", inst.tokens},
              {"head", {{"name", inst.head_name}, {"span", {inst.head.begin, inst.head.end}}}},
              {"tail", {{"name", inst.tail_name}, {"span", {inst.tail.begin, inst.tail.end}}}}};
}

// Gate decisions and fusion attention for every (query, support) pair of one
// episode.
struct PairInspection {
  json gates = json::array();
  std::vector<json> attention;
};

PairInspection inspect_episode(const Episode& e, const Model& model, const ConceptSource& concepts) {
  PairInspection out;
  static const char* kSlots[] = {"query_head", "query_tail", "support_head", "support_tail"};
  for (std::size_t qi = 0; qi < e.queries.size(); ++qi) {
    const auto q = prepare_instance(e.queries[qi].instance, model, concepts);
    for (std::size_t c = 0; c < e.support.size(); ++c) {
      for (std::size_t k = 0; k < e.support[c].size(); ++k) {
        const auto sp = prepare_instance(e.support[c][k], model, concepts);
        PairTrace tr;
        const double logit = pair_forward(q, sp, model, &tr);
        json entities = json::array();
        for (std::size_t slot = 0; slot < ModelConfig::kEntitySlots; ++slot) {
          const auto& side = slot < 2 ? q : sp;
          const std::size_t role = slot % 2;
          json ent{{"slot", kSlots[slot]},
                   {"entity", side.entity_names[role]},
                   {"candidates", side.candidate_names[role]},
                   {"scores", json::array()},
                   {"mask", json::array()},
                   {"selected", nullptr}};
          if (const auto& g = tr.gates[slot]; g.has_value()) {
            ent["scores"] = g->decision.scores;
            ent["mask"] = g->decision.mask;
            if (g->decision.selected) ent["selected"] = side.candidate_names[role][*g->decision.selected];
          }
          entities.push_back(std::move(ent));
        }
        out.gates.push_back(
            json{{"query", qi}, {"support_class", c}, {"support", k}, {"logit", logit}, {"entities", entities}});
        for (std::size_t h = 0; h < tr.fusion.attention.size(); ++h) {
          const auto& a = tr.fusion.attention[h];
          for (std::size_t row = 0; row < a.rows(); ++row) {
            std::vector<double> weights(a.row(row).begin(), a.row(row).end());
            out.attention.push_back(json{{"query", qi},
                                         {"support_class", c},
                                         {"support", k},
                                         {"head", h},
                                         {"position", row},
                                         {"concept", row >= tr.ids.size()},
                                         {"weights", weights}});
          }
        }
      }
    }
  }
  return out;
}

void write_dumps(const Settings& s, const PairInspection& inspection) {
  if (const auto& p = s.str("dump_gates"); !p.empty()) {
    std::ostringstream os;
    for (const auto& g : inspection.gates) os << g.dump() << '\n';
    write_text(p, os.str());
  }
  if (const auto& p = s.str("dump_attention"); !p.empty()) {
    std::ostringstream os;
    for (const auto& a : inspection.attention) os << a.dump() << '\n';
    write_text(p, os.str());
  }
}

Model model_for(const Settings& s, const Data& d) {
  if (const auto& ckpt = s.str("checkpoint"); !ckpt.empty()) {
    require_file(ckpt);
    return load_checkpoint(ckpt);
  }
  return make_model(model_config(s, d), d.dataset, d.split.train, d.concepts());
}

int cmd_train(const Settings& s) {
  const auto d = load_data(s);
  const auto spec = episode_spec(s);
  const auto dir = out_dir(s);
  std::ofstream log(dir / "train_log.jsonl", std::ios::binary);
  if (!log) throw std::runtime_error("cannot write " + (dir / "train_log.jsonl").string());
  const auto model = train_model(s, d, spec, &log);
  const fs::path ckpt = s.str("checkpoint").empty() ? dir / "checkpoint.txt" : fs::path(s.str("checkpoint"));
  save_checkpoint(model, ckpt);
  std::cout << "wrote " << ckpt.string() << " after " << model.config.max_episodes << " episodes\n";
  return 0;
}

int cmd_evaluate(const Settings& s) {
  const auto d = load_data(s);
  const auto spec = episode_spec(s);
  const auto model = model_for(s, d);
  const auto seed = static_cast<std::uint64_t>(s.size("seed"));
  const auto& relations = d.split.test.empty() ? d.split.train : d.split.test;
  const auto report = evaluate(model, d.dataset, relations, spec, d.concepts(), s.size("eval_episodes"), seed);
  if (!s.str("dump_gates").empty() || !s.str("dump_attention").empty()) {
    auto rng = substream(seed, "eval");  // the first evaluation episode
    write_dumps(s, inspect_episode(sample_episode(d.dataset, relations, spec, rng), model, d.concepts()));
  }
  const auto text = eval_report_json(report, model.config.variant, spec, seed);
  write_text(out_dir(s) / "eval.json", text);
  std::cout << text;
  return 0;
}

int cmd_ablate(const Settings& base) {
  const auto d = load_data(base);
  const auto spec = episode_spec(base);
  const auto dir = out_dir(base);
  const auto seed = static_cast<std::uint64_t>(base.size("seed"));
  std::map<Variant, double> acc;
  json rows = json::array();
  std::string csv = "variant,n_way,k_shot,episodes,seed,accuracy,ci95\n";
  for (auto v : kAllVariants) {
    Settings s = base;
    s.set("variant", std::string(to_string(v)), "ablate");
    const auto model = train_model(s, d, spec, nullptr);
    const auto r = evaluate(model, d.dataset, d.split.test, spec, d.concepts(), s.size("eval_episodes"), seed);
    acc[v] = r.accuracy;
    rows.push_back(json::parse(eval_report_json(r, v, spec, seed)));
    csv += std::string(to_string(v)) + "," + std::to_string(spec.n_way) + "," + std::to_string(spec.k_shot) + "," +
           std::to_string(r.episodes) + "," + std::to_string(seed) + "," + number(r.accuracy) + "," +
           number(r.ci95) + "\n";
    std::cerr << to_string(v) << " accuracy " << number(r.accuracy) << "\n";
  }
  const bool holds = acc[Variant::full] >= acc[Variant::sentence_only];
  const std::string ordering = "ordering full >= sentence_only: " + std::string(holds ? "holds" : "violated") + " (" +
                               number(acc[Variant::full]) + " vs " + number(acc[Variant::sentence_only]) + ")";
  write_text(dir / "ablation.csv", csv);
  write_text(dir / "ablation.json",
             json{{"rows", rows}, {"ordering", {{"full_ge_sentence_only", holds}}}}.dump(2) + "\n");
  std::cout << csv << ordering << "\n";
  return 0;
}

int cmd_gradcheck(const Settings& s) {
  std::vector<Variant> variants;
  if (s.str("variant") == "all") {
    variants.assign(kAllVariants.begin(), kAllVariants.end());
  } else {
    variants.push_back(parse_variant(s.str("variant")));
  }
  GradCheckOptions opts;
  opts.corrupt = s.real("corrupt_gradient");
  bool ok = true;
  for (auto v : variants) {
    auto fx = make_gradcheck_fixture(v, s.size("seed"));
    const auto r = check_pair_gradients(fx, opts);
    ok = ok && r.passed();
    std::cout << to_string(v) << ": " << (r.passed() ? "pass" : "FAIL") << " worst " << r.worst() << "\n";
    for (const auto& g : r.groups) std::cout << "  " << g.name << " max_rel_err " << g.max_rel_error << "\n";
  }
  return ok ? 0 : 1;
}

int cmd_sample_episode(const Settings& s) {
  const auto d = load_data(s);
  const auto spec = episode_spec(s);
  const auto seed = static_cast<std::uint64_t>(s.size("seed"));
  auto rng = substream(seed, "sample");
  const auto e = sample_episode(d.dataset, d.split.train, spec, rng);
  json support = json::array();
  for (const auto& group : e.support) {
    json g = json::array();
    for (const auto& inst : group) g.push_back(instance_json(inst));
    support.push_back(std::move(g));
  }
  json queries = json::array();
  for (const auto& q : e.queries) queries.push_back(json{{"label", q.label}, {"instance", instance_json(q.instance)}});
  json out{{"seed", seed}, {"classes", e.classes}, {"support", support}, {"queries", queries}};
  const auto model = model_for(s, d);
  out["variant"] = to_string(model.config.variant);
  const auto inspection = inspect_episode(e, model, d.concepts());
  out["pairs"] = inspection.gates;
  write_dumps(s, inspection);
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_generate_synthetic(const Settings& s) {
  auto rng = substream(s.size("seed"), "synthetic");
  const auto bench = generate_synthetic(synth_config(s), rng);
  const auto dir = out_dir(s);
  save_fewrel(bench.dataset, dir / "synthetic.json");
  save_triples(bench.triples, dir / "triples.tsv");
  save_embeddings(bench.embeddings, dir / "embeddings.txt");
  json truth = json::object();
  for (const auto& [rel, pair] : bench.relation_concepts) truth[rel] = {pair.first, pair.second};
  write_text(dir / "relation_concepts.json", truth.dump(2) + "\n");
  std::cout << "wrote " << bench.dataset.size() << " relations to " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot relation extraction with concept gating and fusion"};
  app.require_subcommand(1);

  std::map<std::string, std::string> flags;
  std::string config_path;
  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Flat key = value settings file");
    const auto opt = [&](const std::string& name, const std::string& help) {
      std::string key = name.substr(2);
      std::replace(key.begin(), key.end(), '-', '_');
      cmd->add_option_function<std::string>(name, [&flags, key](const std::string& v) { flags[key] = v; }, help);
    };
    opt("--data", "FewRel-format JSON (synthetic data when omitted)");
    opt("--concepts", "Entity-concept triples TSV");
    opt("--embeddings", "Concept embeddings, word2vec text format");
    opt("--checkpoint", "Checkpoint to write (train) or read");
    opt("--out", "Output directory");
    opt("--variant", "full | no_att | no_fusion | simple | sentence_only");
    opt("--n-way", "Classes per episode");
    opt("--k-shot", "Support instances per class");
    opt("--queries", "Queries per episode (default N)");
    opt("--alpha", "Gate threshold");
    opt("--episodes", "Training episodes");
    opt("--eval-episodes", "Evaluation episodes");
    opt("--seed", "Root seed");
    opt("--optimizer", "sgd | momentum | adam");
    opt("--lr", "Learning rate");
    opt("--dim", "Encoder width");
    opt("--pooling", "mean | cls");
    opt("--heads", "Fusion attention heads");
    opt("--split-train", "Training relations (0: automatic split)");
    opt("--split-valid", "Validation relations");
    opt("--split-test", "Test relations");
    opt("--dump-gates", "Write gate decisions as JSON lines");
    opt("--dump-attention", "Write fusion attention rows as JSON lines");
  };

  std::map<CLI::App*, int (*)(const Settings&)> handlers;
  const auto sub = [&](const char* name, const char* help, int (*fn)(const Settings&)) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd);
    handlers[cmd] = fn;
    return cmd;
  };
  sub("train", "Train a model and write a checkpoint plus a JSON-lines log", cmd_train);
  sub("evaluate", "Evaluate on test relations and write eval.json", cmd_evaluate);
  sub("ablate", "Train and evaluate all five variants with one seed", cmd_ablate);
  auto* gc = sub("gradcheck", "Finite-difference gradient check on a tiny fixture", cmd_gradcheck);
  gc->add_option_function<std::string>(
      "--corrupt-gradient", [&flags](const std::string& v) { flags["corrupt_gradient"] = v; },
      "Test hook: scale analytic gradients by (1 + x)");
  sub("sample-episode", "Print one episode with gate decisions as JSON", cmd_sample_episode);
  sub("generate-synthetic", "Write the synthetic benchmark files", cmd_generate_synthetic);

  CLI11_PARSE(app, argc, argv);

  try {
    Settings settings;
    auto* cmd = app.get_subcommands().front();
    if (cmd == gc) settings.set("variant", "all", "gradcheck");
    if (!config_path.empty()) settings.load_file(config_path);
    for (const auto& [k, v] : flags) settings.set(k, v, "flag");
    return handlers.at(cmd)(settings);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
