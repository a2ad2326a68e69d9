#include "styleaug/cli.hpp"

int main(int argc, char** argv) { return styleaug::cli::run(argc, argv); }
