#include "rcnet/cli.hpp"

int main(int argc, char **argv)
{
    return rcnet::dispatch(argc, argv);
}
