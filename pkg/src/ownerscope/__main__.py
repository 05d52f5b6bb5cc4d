from ownerscope.cli import main

main()
