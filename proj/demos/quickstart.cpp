// Minimal end-to-end walk through the library: train a teacher and a
// distilled student on a synthetic task, quantize the student three ways,
// and print an accuracy/size line per method.

#include <cstdio>

#include "qdz/dataset.hpp"
#include "qdz/model_io.hpp"
#include "qdz/sizing.hpp"
#include "qdz/train.hpp"

using namespace qdz;

int main() {
  const Dataset data = synth_dataset(SynthKind::spirals, 2000, 3, 0.25, 9001);

  const std::size_t teacher_hidden[] = {64, 64, 64};
  TrainConfig teacher_cfg;
  teacher_cfg.epochs = 60;
  teacher_cfg.seed = 7;
  const TrainResult teacher = train_full_precision(
      Network::dense_classifier(2, teacher_hidden, data.classes, 7), data,
      teacher_cfg);
  std::printf("teacher          fp32   acc %.3f\n", teacher.test_accuracy);

  const std::size_t student_hidden[] = {32};
  TrainConfig student_cfg = teacher_cfg;
  student_cfg.teacher = &teacher.net;
  const TrainResult distilled = train_full_precision(
      Network::dense_classifier(2, student_hidden, data.classes, 8), data,
      student_cfg);
  std::printf("distilled        fp32   acc %.3f\n", distilled.test_accuracy);

  auto report = [&](const char* name, const QuantizedNetwork& qn,
                    std::uint32_t bits) {
    const ModelContainer c = quantized_to_container(qn.net, qn.layers,
                                                    kEncodingHuffman);
    const SizeReport sizes = model_size_report(c);
    std::printf("%-16s %u bits  acc %.3f  gain %.2fx (%.2fx huffman)\n", name,
                bits, evaluate_accuracy(qn.net, data.test_x, data.test_y),
                sizes.gain_plain, sizes.gain_huffman);
  };

  report("pm", pm_quantize(distilled.net, 4, true), 4);

  QDConfig qd;
  qd.scheme.levels = 15;
  qd.epochs = 60;
  qd.seed = 9;
  const QDResult qdr =
      quantized_distillation(Network::dense_classifier(2, student_hidden,
                                                       data.classes, 8),
                             teacher.net, data, qd);
  report("qd", qdr.quantized, 4);

  DQConfig dq;
  dq.bits_per_layer = {4};
  dq.iterations = 400;
  dq.seed = 10;
  const DQResult dqr = differentiable_quantization(distilled.net, data, dq);
  report("dq", dqr.quantized, 4);
  return 0;
}
