#pragma once

#include <string>
#include <vector>

#include "optin/calibration.hpp"
#include "optin/pipeline.hpp"
#include "optin/simulator.hpp"
#include "optin/tracking.hpp"

// JSONL and JSON document formats. Every reader throws SchemaError on a
// malformed record (with its 1-based line number) and IoError on file access.
namespace optin::io {

// {tag_id, t, radial_m, azimuth_rad, elevation_rad, feat}
std::string uwb_record(const UwbSample& s);
UwbSample parse_uwb_record(const std::string& line);

// {tracklet_id, t, u_px, v_px, w_px, h_px}
std::string detection_record(const HeadDetection& d);
HeadDetection parse_detection_record(const std::string& line);

// {t, tracklet_id, person_id, carries_tag}; an optional trailing tag_id is accepted.
std::string truth_record(const TruthLabel& l);
TruthLabel parse_truth_record(const std::string& line);

std::vector<UwbSample> read_uwb(const std::string& path);
void write_uwb(const std::string& path, const std::vector<UwbSample>& samples);
std::vector<HeadDetection> read_detections(const std::string& path);
void write_detections(const std::string& path, const std::vector<HeadDetection>& dets);
std::vector<TruthLabel> read_truth(const std::string& path);
void write_truth(const std::string& path, const std::vector<TruthLabel>& labels);

/// Missing keys keep their defaults; present keys must have the right shape.
PipelineConfig parse_config(const std::string& text);
std::string config_document(const PipelineConfig& cfg);
PipelineConfig read_config(const std::string& path);
void write_config(const std::string& path, const PipelineConfig& cfg);

std::string calibration_report(const ExtrinsicResult& extrinsics, const TunedNoise* noise);

std::string decision_record(const FrameDecision& f);
FrameDecision parse_decision_record(const std::string& line);
std::vector<FrameDecision> read_decisions(const std::string& path);
void write_decisions(const std::string& path, const std::vector<FrameDecision>& frames);

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

}  // namespace optin::io
