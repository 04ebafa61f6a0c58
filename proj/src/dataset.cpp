#include "stca/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace stca {

using nlohmann::json;

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw DataError("failed writing '" + path + "'");
}

// ----- run config -----

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': cannot parse integer from '" + value + "'");
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': cannot parse number from '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    throw ConfigError("config key '" + key + "': expected 0/1/true/false, got '" + value + "'");
}

} // namespace

RunConfig parse_run_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));

        if (key == "d_v") cfg.stca.d_v = parse_int(key, value);
        else if (key == "d_phi") cfg.stca.d_phi = parse_int(key, value);
        else if (key == "n_proposals") cfg.stca.n_proposals = parse_int(key, value);
        else if (key == "window") cfg.stca.window = parse_int(key, value);
        else if (key == "tau") cfg.stca.tau = parse_int(key, value);
        else if (key == "eps_geom") cfg.stca.eps_geom = parse_double(key, value);
        else if (key == "eps_spatial") cfg.stca.eps_spatial = parse_double(key, value);
        else if (key == "sinusoid_base") cfg.stca.sinusoid_base = parse_double(key, value);
        else if (key == "signed_tau") cfg.stca.signed_tau = parse_bool(key, value);
        else if (key == "share_query") cfg.stca.share_query = parse_bool(key, value);
        else if (key == "variant") cfg.stca.variant = variant_from_string(value);
        else if (key == "steps") cfg.trainer.steps = parse_int(key, value);
        else if (key == "lr") cfg.trainer.lr = parse_double(key, value);
        else if (key == "lr_drop_step") cfg.trainer.lr_drop_step = parse_int(key, value);
        else if (key == "lr_drop_factor") cfg.trainer.lr_drop_factor = parse_double(key, value);
        else if (key == "momentum") cfg.trainer.momentum = parse_double(key, value);
        else if (key == "weight_decay") cfg.trainer.weight_decay = parse_double(key, value);
        else if (key == "seed") cfg.trainer.seed = static_cast<std::uint64_t>(parse_int(key, value));
        else if (key == "videos") cfg.gen.videos = parse_int(key, value);
        else if (key == "frames_per_video") cfg.gen.frames_per_video = parse_int(key, value);
        else if (key == "classes") cfg.gen.classes = parse_int(key, value);
        else if (key == "feature_scale") cfg.gen.feature_scale = parse_double(key, value);
        else if (key == "noise_sigma") cfg.gen.noise_sigma = parse_double(key, value);
        else throw ConfigError("unknown config key '" + key + "'");
    }

    cfg.stca.validate();
    if (cfg.trainer.steps < 0) throw ConfigError("steps must be >= 0");
    if (!(cfg.trainer.lr > 0.0)) throw ConfigError("lr must be > 0");
    if (cfg.trainer.momentum < 0.0 || cfg.trainer.momentum >= 1.0)
        throw ConfigError("momentum must lie in [0, 1)");
    if (cfg.trainer.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (cfg.gen.videos <= 0 || cfg.gen.frames_per_video <= 0)
        throw ConfigError("generator needs positive videos and frames_per_video");
    if (cfg.gen.classes < 1) throw ConfigError("classes must be >= 1");
    return cfg;
}

RunConfig parse_run_config(const std::string& path) {
    try {
        return parse_run_config_text(read_text_file(path));
    } catch (const DataError& e) {
        throw ConfigError(e.what()); // a missing config file is a usage error
    }
}

std::string serialize_run_config(const RunConfig& cfg) {
    std::ostringstream out;
    out << "d_v = " << cfg.stca.d_v << "\n";
    out << "d_phi = " << cfg.stca.d_phi << "\n";
    out << "n_proposals = " << cfg.stca.n_proposals << "\n";
    out << "window = " << cfg.stca.window << "\n";
    out << "tau = " << cfg.stca.tau << "\n";
    out << "eps_geom = " << cfg.stca.eps_geom << "\n";
    out << "eps_spatial = " << cfg.stca.eps_spatial << "\n";
    out << "sinusoid_base = " << cfg.stca.sinusoid_base << "\n";
    out << "signed_tau = " << (cfg.stca.signed_tau ? 1 : 0) << "\n";
    out << "share_query = " << (cfg.stca.share_query ? 1 : 0) << "\n";
    out << "variant = " << to_string(cfg.stca.variant) << "\n";
    out << "steps = " << cfg.trainer.steps << "\n";
    out << "lr = " << cfg.trainer.lr << "\n";
    out << "lr_drop_step = " << cfg.trainer.lr_drop_step << "\n";
    out << "lr_drop_factor = " << cfg.trainer.lr_drop_factor << "\n";
    out << "momentum = " << cfg.trainer.momentum << "\n";
    out << "weight_decay = " << cfg.trainer.weight_decay << "\n";
    out << "seed = " << cfg.trainer.seed << "\n";
    out << "videos = " << cfg.gen.videos << "\n";
    out << "frames_per_video = " << cfg.gen.frames_per_video << "\n";
    out << "classes = " << cfg.gen.classes << "\n";
    out << "feature_scale = " << cfg.gen.feature_scale << "\n";
    out << "noise_sigma = " << cfg.gen.noise_sigma << "\n";
    return out.str();
}

// ----- dataset records -----

namespace {

json proposal_to_json(const Proposal& p, int label) {
    json j;
    j["box"] = {p.box.cx, p.box.cy, p.box.w, p.box.h};
    j["feature"] = p.feature;
    j["objectness"] = p.objectness;
    if (label >= 0) j["label"] = label;
    return j;
}

} // namespace

std::string serialize_dataset(const Dataset& data) {
    std::ostringstream out;
    for (const VideoRecord& video : data.videos) {
        for (const FrameRecord& rec : video.frames) {
            json j;
            j["video_id"] = video.video_id;
            j["frame_id"] = rec.frame.frame_id;
            json props = json::array();
            for (std::size_t i = 0; i < rec.frame.proposals.size(); ++i) {
                const int label = rec.labels.empty() ? -1 : rec.labels[i];
                props.push_back(proposal_to_json(rec.frame.proposals[i], label));
            }
            j["proposals"] = std::move(props);
            out << j.dump() << "\n";
        }
    }
    return out.str();
}

Dataset parse_dataset_text(const std::string& text) {
    Dataset data;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    std::set<std::string> finished_videos;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("dataset line " + std::to_string(line_no) + ": " + e.what());
        }
        try {
            const auto video_id = j.at("video_id").get<std::string>();
            const auto frame_id = j.at("frame_id").get<int>();

            if (data.videos.empty() || data.videos.back().video_id != video_id) {
                if (finished_videos.contains(video_id)) {
                    throw DataError("video '" + video_id + "' appears in two separate runs");
                }
                if (!data.videos.empty()) finished_videos.insert(data.videos.back().video_id);
                data.videos.push_back({video_id, {}});
            }
            VideoRecord& video = data.videos.back();
            if (!video.frames.empty() &&
                video.frames.back().frame.frame_id >= frame_id) {
                throw DataError("video '" + video_id + "': frame ids not ascending at line " +
                                std::to_string(line_no));
            }

            FrameRecord rec;
            rec.frame.frame_id = frame_id;
            bool any_label = false;
            bool all_labels = true;
            for (const json& pj : j.at("proposals")) {
                Proposal p;
                const auto& box = pj.at("box");
                if (!box.is_array() || box.size() != 4) {
                    throw DataError("proposal box must be [cx, cy, w, h]");
                }
                p.box = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
                         box[3].get<double>()};
                p.frame_id = frame_id;
                p.feature = pj.at("feature").get<std::vector<double>>();
                p.objectness = pj.at("objectness").get<double>();
                if (pj.contains("label")) {
                    rec.labels.push_back(pj.at("label").get<int>());
                    any_label = true;
                } else {
                    rec.labels.push_back(-1);
                    all_labels = false;
                }
                rec.frame.proposals.push_back(std::move(p));
            }
            if (!any_label) {
                rec.labels.clear();
            } else if (!all_labels) {
                throw DataError("dataset line " + std::to_string(line_no) +
                                ": labels must cover every proposal or none");
            }
            video.frames.push_back(std::move(rec));
        } catch (const json::exception& e) {
            throw DataError("dataset line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return data;
}

Dataset parse_dataset(const std::string& path) { return parse_dataset_text(read_text_file(path)); }

void write_dataset(const Dataset& data, const std::string& path) {
    write_text_file(path, serialize_dataset(data));
}

void validate_dataset(const Dataset& data, const StcaConfig& config) {
    for (const VideoRecord& video : data.videos) {
        for (const FrameRecord& rec : video.frames) {
            if (const auto v = validate_frame(rec.frame, config); !v) {
                throw DataError("video '" + video.video_id + "': " + v.detail);
            }
            if (!rec.labels.empty() && rec.labels.size() != rec.frame.proposals.size()) {
                throw DataError("video '" + video.video_id + "': label count mismatch");
            }
        }
    }
}

// ----- detections -----

std::string serialize_detections(const std::vector<VideoDetections>& detections) {
    std::ostringstream out;
    for (const VideoDetections& video : detections) {
        for (const FrameDetections& det : video.frames) {
            json j;
            j["video_id"] = video.video_id;
            j["frame_id"] = det.frame_id;
            json rows = json::array();
            for (std::size_t r = 0; r < det.posteriors.rows(); ++r) {
                json row;
                row["label"] = det.labels[r];
                std::vector<double> posterior(det.posteriors.row(r).begin(),
                                              det.posteriors.row(r).end());
                row["posterior"] = posterior;
                rows.push_back(std::move(row));
            }
            j["detections"] = std::move(rows);
            out << j.dump() << "\n";
        }
    }
    return out.str();
}

std::vector<VideoDetections> parse_detections_text(const std::string& text) {
    std::vector<VideoDetections> out;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            const json j = json::parse(line);
            const auto video_id = j.at("video_id").get<std::string>();
            if (out.empty() || out.back().video_id != video_id) {
                out.push_back({video_id, {}});
            }
            FrameDetections det;
            det.frame_id = j.at("frame_id").get<int>();
            const json& rows = j.at("detections");
            if (!rows.empty()) {
                const std::size_t width = rows.front().at("posterior").size();
                det.posteriors = Matrix(rows.size(), width);
                std::size_t r = 0;
                for (const json& row : rows) {
                    det.labels.push_back(row.at("label").get<int>());
                    const auto posterior = row.at("posterior").get<std::vector<double>>();
                    if (posterior.size() != width) {
                        throw DataError("detections line " + std::to_string(line_no) +
                                        ": ragged posterior");
                    }
                    for (std::size_t c = 0; c < width; ++c) det.posteriors(r, c) = posterior[c];
                    ++r;
                }
            }
            out.back().frames.push_back(std::move(det));
        } catch (const json::exception& e) {
            throw DataError("detections line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::vector<VideoDetections> parse_detections(const std::string& path) {
    return parse_detections_text(read_text_file(path));
}

void write_detections(const std::vector<VideoDetections>& detections, const std::string& path) {
    write_text_file(path, serialize_detections(detections));
}

std::string serialize_attention(const std::vector<VideoDetections>& detections) {
    std::ostringstream out;
    for (const VideoDetections& video : detections) {
        for (const FrameDetections& det : video.frames) {
            if (det.attention.empty()) continue;
            json j;
            j["video_id"] = video.video_id;
            j["frame_id"] = det.frame_id;
            json targets = json::array();
            for (std::size_t i = 0; i < det.attention.size(); ++i) {
                json t;
                t["index"] = i;
                json top = json::array();
                for (const AttentionPair& p : det.attention[i]) {
                    top.push_back({{"frame", p.candidate_frame},
                                   {"index", p.candidate_index},
                                   {"weight", p.weight}});
                }
                t["top"] = std::move(top);
                targets.push_back(std::move(t));
            }
            j["targets"] = std::move(targets);
            out << j.dump() << "\n";
        }
    }
    return out.str();
}

// ----- checkpoint -----

namespace {

void write_matrix(std::ostringstream& out, const std::string& name, const Matrix& m) {
    out << "matrix " << name << " " << m.rows() << " " << m.cols() << "\n";
    out << std::hexfloat;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out << m(i, j) << (j + 1 == m.cols() ? "" : " ");
        }
        out << "\n";
    }
    out << std::defaultfloat;
}

void write_vector(std::ostringstream& out, const std::string& name,
                  const std::vector<double>& v) {
    Matrix m(1, v.size());
    for (std::size_t i = 0; i < v.size(); ++i) m(0, i) = v[i];
    write_matrix(out, name, m);
}

} // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::ostringstream out;
    out << "stca-checkpoint 1\n";
    out << "d_v " << ckpt.config.d_v << "\n";
    out << "d_phi " << ckpt.config.d_phi << "\n";
    out << "n_proposals " << ckpt.config.n_proposals << "\n";
    out << "window " << ckpt.config.window << "\n";
    out << "tau " << ckpt.config.tau << "\n";
    out << std::hexfloat;
    out << "eps_geom " << ckpt.config.eps_geom << "\n";
    out << "eps_spatial " << ckpt.config.eps_spatial << "\n";
    out << "sinusoid_base " << ckpt.config.sinusoid_base << "\n";
    out << std::defaultfloat;
    out << "signed_tau " << (ckpt.config.signed_tau ? 1 : 0) << "\n";
    out << "share_query " << (ckpt.config.share_query ? 1 : 0) << "\n";
    out << "variant " << to_string(ckpt.config.variant) << "\n";
    out << "classes " << ckpt.classes << "\n";
    out << "head_only " << (ckpt.head_only ? 1 : 0) << "\n";

    write_matrix(out, "stage1.w_q", ckpt.stage1.w_q);
    write_matrix(out, "stage1.w_k", ckpt.stage1.w_k);
    write_vector(out, "stage1.w_s", ckpt.stage1.w_s);
    write_matrix(out, "stage1.w_t", ckpt.stage1.w_t);
    if (!ckpt.stage1.w_q_t.empty()) write_matrix(out, "stage1.w_q_t", ckpt.stage1.w_q_t);
    write_matrix(out, "stage2.w_q", ckpt.stage2.w_q);
    write_matrix(out, "stage2.w_k", ckpt.stage2.w_k);
    write_vector(out, "stage2.w_s", ckpt.stage2.w_s);
    write_matrix(out, "stage2.w_t", ckpt.stage2.w_t);
    if (!ckpt.stage2.w_q_t.empty()) write_matrix(out, "stage2.w_q_t", ckpt.stage2.w_q_t);
    write_matrix(out, "head.weights", ckpt.head.weights);
    write_vector(out, "head.bias", ckpt.head.bias);
    out << "end\n";
    return out.str();
}

Checkpoint parse_checkpoint_text(const std::string& text) {
    std::istringstream in(text);
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "stca-checkpoint" || version != 1) {
        throw DataError("not a recognizable checkpoint");
    }

    Checkpoint ckpt;
    std::map<std::string, Matrix> matrices;
    std::string token;
    while (in >> token) {
        if (token == "end") break;
        if (token == "matrix") {
            std::string name;
            std::size_t rows = 0, cols = 0;
            in >> name >> rows >> cols;
            Matrix m(rows, cols);
            for (std::size_t i = 0; i < rows; ++i) {
                for (std::size_t j = 0; j < cols; ++j) {
                    std::string value;
                    if (!(in >> value)) throw DataError("checkpoint truncated in " + name);
                    m(i, j) = std::strtod(value.c_str(), nullptr);
                }
            }
            matrices.emplace(name, std::move(m));
            continue;
        }
        std::string value;
        if (!(in >> value)) throw DataError("checkpoint truncated after '" + token + "'");
        if (token == "d_v") ckpt.config.d_v = std::stoi(value);
        else if (token == "d_phi") ckpt.config.d_phi = std::stoi(value);
        else if (token == "n_proposals") ckpt.config.n_proposals = std::stoi(value);
        else if (token == "window") ckpt.config.window = std::stoi(value);
        else if (token == "tau") ckpt.config.tau = std::stoi(value);
        else if (token == "eps_geom") ckpt.config.eps_geom = std::strtod(value.c_str(), nullptr);
        else if (token == "eps_spatial") ckpt.config.eps_spatial = std::strtod(value.c_str(), nullptr);
        else if (token == "sinusoid_base") ckpt.config.sinusoid_base = std::strtod(value.c_str(), nullptr);
        else if (token == "signed_tau") ckpt.config.signed_tau = value == "1";
        else if (token == "share_query") ckpt.config.share_query = value == "1";
        else if (token == "variant") ckpt.config.variant = variant_from_string(value);
        else if (token == "classes") ckpt.classes = std::stoi(value);
        else if (token == "head_only") ckpt.head_only = value == "1";
        else throw DataError("unknown checkpoint field '" + token + "'");
    }

    auto take_matrix = [&](const std::string& name, bool required = true) {
        const auto it = matrices.find(name);
        if (it == matrices.end()) {
            if (required) throw DataError("checkpoint is missing matrix '" + name + "'");
            return Matrix();
        }
        return it->second;
    };
    auto take_vector = [&](const std::string& name) {
        const Matrix m = take_matrix(name);
        return std::vector<double>(m.flat().begin(), m.flat().end());
    };

    ckpt.stage1.w_q = take_matrix("stage1.w_q");
    ckpt.stage1.w_k = take_matrix("stage1.w_k");
    ckpt.stage1.w_s = take_vector("stage1.w_s");
    ckpt.stage1.w_t = take_matrix("stage1.w_t");
    ckpt.stage1.w_q_t = take_matrix("stage1.w_q_t", false);
    ckpt.stage2.w_q = take_matrix("stage2.w_q");
    ckpt.stage2.w_k = take_matrix("stage2.w_k");
    ckpt.stage2.w_s = take_vector("stage2.w_s");
    ckpt.stage2.w_t = take_matrix("stage2.w_t");
    ckpt.stage2.w_q_t = take_matrix("stage2.w_q_t", false);
    ckpt.head.weights = take_matrix("head.weights");
    ckpt.head.bias = take_vector("head.bias");
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    write_text_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
    return parse_checkpoint_text(read_text_file(path));
}

// ----- evaluation -----

EvalResult evaluate_accuracy(const std::vector<VideoDetections>& detections,
                             const Dataset& data) {
    std::map<std::string, const VideoRecord*> videos;
    for (const VideoRecord& v : data.videos) videos[v.video_id] = &v;

    EvalResult result;
    std::map<int, ClassStats> per_class;
    for (const VideoDetections& video : detections) {
        const auto vit = videos.find(video.video_id);
        if (vit == videos.end()) {
            throw DataError("alignment mismatch: video '" + video.video_id +
                            "' is absent from the dataset");
        }
        std::map<int, const FrameRecord*> frames;
        for (const FrameRecord& rec : vit->second->frames) frames[rec.frame.frame_id] = &rec;
        for (const FrameDetections& det : video.frames) {
            const auto fit = frames.find(det.frame_id);
            if (fit == frames.end()) {
                throw DataError("alignment mismatch: frame " + std::to_string(det.frame_id) +
                                " of video '" + video.video_id + "' is absent");
            }
            const FrameRecord& rec = *fit->second;
            if (rec.labels.empty()) {
                throw DataError("video '" + video.video_id + "' frame " +
                                std::to_string(det.frame_id) + " carries no labels");
            }
            if (det.labels.size() != rec.labels.size()) {
                throw DataError("alignment mismatch: proposal counts differ in frame " +
                                std::to_string(det.frame_id));
            }
            for (std::size_t i = 0; i < det.labels.size(); ++i) {
                ClassStats& cs = per_class
                                     .try_emplace(rec.labels[i],
                                                  ClassStats{rec.labels[i], 0, 0, 0.0})
                                     .first->second;
                ++cs.total;
                ++result.total;
                if (det.labels[i] == rec.labels[i]) {
                    ++cs.correct;
                    ++result.correct;
                }
            }
        }
    }
    if (result.total == 0) throw DataError("evaluation over zero proposals");
    result.accuracy = static_cast<double>(result.correct) / static_cast<double>(result.total);
    for (auto& [id, cs] : per_class) {
        cs.recall = cs.total ? static_cast<double>(cs.correct) / static_cast<double>(cs.total)
                             : 0.0;
        result.per_class.push_back(cs);
    }
    return result;
}

EvalResult evaluate_accuracy_files(const std::string& detections_path,
                                   const std::string& data_path) {
    return evaluate_accuracy(parse_detections(detections_path), parse_dataset(data_path));
}

} // namespace stca
