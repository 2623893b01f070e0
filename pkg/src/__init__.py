# nodewise-portfolio source package
