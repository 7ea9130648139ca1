#include "editvae/cli.hpp"

int main(int argc, char** argv) { return editvae::run_cli(argc, argv); }
