#pragma once

#include "stca/pipeline.hpp"

#include <string>
#include <vector>

namespace stca {

struct GeneratorConfig {
    int videos = 10;
    int frames_per_video = 24;
    int classes = 2;
    double feature_scale = 3.0;
    double noise_sigma = 0.25;
};

// Flat key=value run configuration. Unknown keys are an error.
struct RunConfig {
    StcaConfig stca;
    TrainerConfig trainer;
    GeneratorConfig gen;
};

RunConfig parse_run_config_text(const std::string& text);
RunConfig parse_run_config(const std::string& path);
std::string serialize_run_config(const RunConfig& cfg);

// Line-delimited dataset records, one frame per line:
// {"frame_id":..,"proposals":[{"box":[cx,cy,w,h],"feature":[..],"label":..,
//  "objectness":..}],"video_id":".."}
Dataset parse_dataset_text(const std::string& text);
Dataset parse_dataset(const std::string& path);
std::string serialize_dataset(const Dataset& data);
void write_dataset(const Dataset& data, const std::string& path);

// every frame must satisfy the frame invariants for this config
void validate_dataset(const Dataset& data, const StcaConfig& config);

struct VideoDetections {
    std::string video_id;
    std::vector<FrameDetections> frames;
};

std::string serialize_detections(const std::vector<VideoDetections>& detections);
std::vector<VideoDetections> parse_detections_text(const std::string& text);
std::vector<VideoDetections> parse_detections(const std::string& path);
void write_detections(const std::vector<VideoDetections>& detections, const std::string& path);

// top-k dependency pairs per target, one key frame per line
std::string serialize_attention(const std::vector<VideoDetections>& detections);

// Self-describing text checkpoint: config echo plus every matrix in
// row-major order behind an explicit dimension header. Values are written
// as hexfloats so the round-trip is exact.
struct Checkpoint {
    StcaConfig config;
    int classes = 2;
    bool head_only = false; // trained without the aggregation stages
    StcaParams stage1;
    StcaParams stage2;
    HeadParams head;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint_text(const std::string& text);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct ClassStats {
    int class_id = 0;
    std::size_t total = 0;
    std::size_t correct = 0;
    double recall = 0.0;
};

struct EvalResult {
    double accuracy = 0.0;
    std::size_t total = 0;
    std::size_t correct = 0;
    std::vector<ClassStats> per_class;
};

// fraction of key-frame proposals whose argmax label matches ground truth
EvalResult evaluate_accuracy(const std::vector<VideoDetections>& detections,
                             const Dataset& data);
EvalResult evaluate_accuracy_files(const std::string& detections_path,
                                   const std::string& data_path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

} // namespace stca
