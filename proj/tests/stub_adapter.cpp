// Line-protocol detector used by the bridge tests.
//   stub_adapter MODE [N_CLASSES]
// MODE: empty | toy | bad-probs | wrong-image | crash | hang | bad-handshake | silent-exit

#include "baddet/error.hpp"
#include "baddet/image_io.hpp"
#include "baddet/toy_detector.hpp"
#include "baddet/wire.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>

using nlohmann::json;

int main(int argc, char** argv) {
    const std::string mode = argc > 1 ? argv[1] : "empty";
    std::ios::sync_with_stdio(false);

    std::string line;
    if (!std::getline(std::cin, line)) return 3;
    const auto hello = json::parse(line);
    const int n_classes = static_cast<int>(hello.at("classes").size());
    if (mode == "bad-handshake") {
        std::cout << "{\"ok\": false}" << std::endl;
        return 0;
    }
    std::cout << "{\"ok\": true}" << std::endl;

    baddet::ToyDetectorConfig cfg;
    cfg.n_classes = n_classes;
    baddet::ToyDetector toy(cfg);

    while (std::getline(std::cin, line)) {
        const auto req = json::parse(line);
        const std::string image = req.at("image");
        if (mode == "crash") {
            std::cerr << "stub: simulated failure on " << image << std::endl;
            return 7;
        }
        if (mode == "silent-exit") return 0;
        if (mode == "hang") std::this_thread::sleep_for(std::chrono::hours(1));
        baddet::ImageDetections rec{image, {}};
        if (mode == "wrong-image") rec.image = image + ".other";
        if (mode == "toy") {
            try {
                rec.detections = toy.detect(baddet::load_png(image));
            } catch (const baddet::Error& e) {
                std::cerr << "warning: " << e.what() << std::endl;
            }
        }
        if (mode == "bad-probs") {
            std::vector<double> p(static_cast<std::size_t>(n_classes), 0.0);
            p[0] = 0.8;
            rec.detections.push_back({{1, 1, 5, 5}, p, 0.8});
        }
        std::cout << baddet::encode_detection_record(rec) << '\n' << std::flush;
    }
    return 0;
}
