#include "eyeref/cli.hpp"

int main(int argc, char** argv) { return eyeref::cli::run(argc, argv); }
